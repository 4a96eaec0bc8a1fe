"""Axial warping units.

Each input dimension is deformed independently by a composition of layers.
A layer is a nonnegative combination of a linear ramp and ``n_basis``
increasing sigmoids,

    F(x) = eta_0 (x - lo) / (hi - lo) + sum_i eta_i sigmoid(s (x - c_i)),

renormalised so that ``lo -> lo`` and ``hi -> hi``.  With ``eta >= 0`` every
layer is nondecreasing and maps the interval onto itself.  A warping with
no layers is the identity map (bit-exact).
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from ..errors import InvalidInputError

# default sigmoid sharpness in units of 1 / span: each sigmoid rises over
# roughly a tenth of the interval, wide enough that the warp cannot place
# unconstrained steps between neighbouring design points
SHARPNESS_SCALE = 20.0


@dataclass
class AxialWarping:
    bounds: np.ndarray  # (P, 2)
    centers: np.ndarray  # (P, n_basis)
    sharpness: np.ndarray  # (P,)
    layers: list = field(default_factory=list)  # each (P, n_basis + 1), column 0 is the ramp

    def __post_init__(self):
        self.bounds = np.atleast_2d(np.asarray(self.bounds, dtype=float))
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        self.sharpness = np.atleast_1d(np.asarray(self.sharpness, dtype=float))
        self.layers = [np.atleast_2d(np.asarray(w, dtype=float)) for w in self.layers]
        for w in self.layers:
            if w.shape != (self.dim, self.n_basis + 1):
                raise InvalidInputError(f"layer weights must have shape {(self.dim, self.n_basis + 1)}")
            if np.any(w < 0):
                raise InvalidInputError("warping weights must be nonnegative")

    @classmethod
    def create(cls, bounds, n_basis=100, n_layers=1, sharpness=None, weights=None):
        """Equally spaced sigmoid centres; default sharpness is ``SHARPNESS_SCALE / span``.

        Default weights are a unit ramp plus small equal sigmoid weights.
        """
        bounds = np.atleast_2d(np.asarray(bounds, dtype=float))
        centers = np.stack([np.linspace(lo, hi, n_basis) for lo, hi in bounds])
        if sharpness is None:
            sharpness = SHARPNESS_SCALE / (bounds[:, 1] - bounds[:, 0])
        if weights is None:
            w = np.full((bounds.shape[0], n_basis + 1), 0.01)
            w[:, 0] = 1.0
            weights = [w.copy() for _ in range(n_layers)]
        return cls(bounds, centers, np.broadcast_to(sharpness, (bounds.shape[0],)).copy(), list(weights))

    @classmethod
    def identity(cls, bounds, n_basis=100):
        return cls.create(bounds, n_basis=n_basis, n_layers=0, weights=[])

    @property
    def dim(self):
        return self.bounds.shape[0]

    @property
    def n_basis(self):
        return self.centers.shape[1]

    @property
    def n_layers(self):
        return len(self.layers)

    @property
    def is_identity(self):
        return not self.layers

    def with_layers(self, layers):
        return AxialWarping(self.bounds, self.centers, self.sharpness, layers)

    # -- basis ----------------------------------------------------------

    def _basis(self, x, i, order):
        """Basis values (order 0), first or second derivatives, shape (n, n_basis + 1)."""
        lo, hi = self.bounds[i]
        s = self.sharpness[i]
        sig = expit(s * (x[:, None] - self.centers[i][None, :]))
        out = np.empty((x.shape[0], self.n_basis + 1))
        if order == 0:
            out[:, 0] = (x - lo) / (hi - lo)
            out[:, 1:] = sig
        elif order == 1:
            out[:, 0] = 1.0 / (hi - lo)
            out[:, 1:] = s * sig * (1 - sig)
        else:
            out[:, 0] = 0.0
            out[:, 1:] = s * s * sig * (1 - sig) * (1 - 2 * sig)
        return out

    def _layer(self, y, i, eta, need_jac=False):
        """One layer on dimension ``i``: value, first and second derivative.

        With ``need_jac`` also returns the Jacobians of the value and of the
        first derivative with respect to ``eta``.
        """
        lo, hi = self.bounds[i]
        span = hi - lo
        ends = self._basis(np.array([lo, hi]), i, 0)
        delta = ends[1] - ends[0]
        denom = eta @ delta
        phi = self._basis(y, i, 0) - ends[0]
        dphi = self._basis(y, i, 1)
        d2phi = self._basis(y, i, 2)
        num = phi @ eta
        dnum = dphi @ eta
        val = lo + span * num / denom
        d1 = span * dnum / denom
        d2 = span * (d2phi @ eta) / denom
        if not need_jac:
            return val, d1, d2
        jac_val = span * (phi * denom - num[:, None] * delta[None, :]) / denom**2
        jac_d1 = span * (dphi * denom - dnum[:, None] * delta[None, :]) / denom**2
        return val, d1, d2, jac_val, jac_d1

    # -- public map -----------------------------------------------------

    def clamp(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        clamped = np.clip(x, lo, hi)
        flags = np.any(clamped != x, axis=1)
        return clamped, flags

    def warp(self, x, return_flags=False):
        """Warp points ``x`` of shape (n, P); out-of-bounds inputs are clamped."""
        x, flags = self.clamp(x)
        if flags.any():
            warnings.warn(f"{int(flags.sum())} input(s) outside the warping bounds were clamped", stacklevel=2)
        if self.is_identity:
            out = x.copy()
        else:
            out = np.empty_like(x)
            for i in range(self.dim):
                y = x[:, i]
                for w in self.layers:
                    y = self._layer(y, i, w[i])[0]
                out[:, i] = y
        return (out, flags) if return_flags else out

    def warp_deriv(self, x, i=0):
        """Derivative of the dimension-``i`` warp at points ``x`` (n, P); product over layers."""
        x, _ = self.clamp(x)
        if self.is_identity:
            return np.ones(x.shape[0])
        y = x[:, i]
        g = np.ones_like(y)
        for w in self.layers:
            y, d1, _ = self._layer(y, i, w[i])
            g = g * d1
        return g

    def warp_with_deriv(self, x, d):
        """Warped coordinates (n, P) and dimension-``d`` derivative (n,), no warnings."""
        x, _ = self.clamp(x)
        if self.is_identity:
            return x.copy(), np.ones(x.shape[0])
        out = np.empty_like(x)
        deriv = np.ones(x.shape[0])
        for i in range(self.dim):
            y = x[:, i]
            for w in self.layers:
                y, d1, _ = self._layer(y, i, w[i])
                if i == d:
                    deriv = deriv * d1
            out[:, i] = y
        return out, deriv

    def backward(self, x, i, grad_w, grad_g=None):
        """Gradients with respect to the layer weights of dimension ``i``.

        ``grad_w`` is dL/d(warped coordinate i) and ``grad_g`` is dL/d(warp
        derivative in dimension i), both of shape (n,).  Returns an array
        (n_layers, n_basis + 1).
        """
        x, _ = self.clamp(x)
        ys = [x[:, i]]
        terms = []
        for w in self.layers:
            out = self._layer(ys[-1], i, w[i], need_jac=True)
            terms.append(out)
            ys.append(out[0])
        gtotal = np.prod([t[1] for t in terms], axis=0) if terms else np.ones_like(ys[0])
        ybar = np.asarray(grad_w, dtype=float).copy()
        gbar = np.zeros_like(ybar) if grad_g is None else np.asarray(grad_g, dtype=float)
        grads = np.empty((self.n_layers, self.n_basis + 1))
        for li in range(self.n_layers - 1, -1, -1):
            _, d1, d2, jac_val, jac_d1 = terms[li]
            others = gtotal / d1
            grads[li] = ybar @ jac_val + (gbar * others) @ jac_d1
            ybar = ybar * d1 + gbar * others * d2
        return grads

    # -- serialization --------------------------------------------------

    def to_dict(self):
        return {
            "bounds": self.bounds.tolist(),
            "centers": self.centers.tolist(),
            "sharpness": self.sharpness.tolist(),
            "layers": [w.tolist() for w in self.layers],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["bounds"], d["centers"], d["sharpness"], d["layers"])


def warp(warping, x):
    """Warp a scalar (1-D warping) or an array of points."""
    scalar = np.ndim(x) == 0
    out = warping.warp(np.reshape(x, (-1, warping.dim)))
    return float(out[0, 0]) if scalar else out


def warp_deriv(warping, x, i=0):
    scalar = np.ndim(x) == 0
    out = warping.warp_deriv(np.reshape(x, (-1, warping.dim)), i)
    return float(out[0]) if scalar else out
