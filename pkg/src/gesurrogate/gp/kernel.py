"""Matern 3/2 kernel and the derivative terms needed for gradient observations.

For lag ``h = w_l - w_j`` (warped coordinates) and ``r = |h|``:

    K            = xi2 (1 + a r) exp(-a r)
    dK/dw_j[d]   = xi2 a^2 exp(-a r) h[d]
    d2K/dw_j[d] dw_l[d] = xi2 a^2 exp(-a r) (1 - a h[d]^2 / r)
"""

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidInputError


@dataclass(frozen=True)
class Matern32Kernel:
    xi2: float
    a: float

    def __post_init__(self):
        if not (self.xi2 > 0 and self.a > 0):
            raise InvalidInputError("Matern kernel needs xi2 > 0 and a > 0")


def _lag(w_j, w_l):
    return np.asarray(w_l, dtype=float) - np.asarray(w_j, dtype=float)


def kernel_eval(kernel, w_j, w_l):
    r = np.abs(_lag(w_j, w_l))
    return kernel.xi2 * (1 + kernel.a * r) * np.exp(-kernel.a * r)


def kernel_d1(kernel, w_j, w_l):
    """Derivative with respect to the first argument ``w_j``."""
    h = _lag(w_j, w_l)
    return kernel.xi2 * kernel.a**2 * h * np.exp(-kernel.a * np.abs(h))


def kernel_d2(kernel, w_j, w_l):
    """Mixed second derivative with respect to ``w_j`` and ``w_l``."""
    r = np.abs(_lag(w_j, w_l))
    return kernel.xi2 * kernel.a**2 * (1 - kernel.a * r) * np.exp(-kernel.a * r)


def pair_terms(xi2, a, H, d, grad=False):
    """Kernel value and derivative terms for an array of lag vectors.

    ``H`` has shape (..., P).  Returns ``(kgg, q, s)`` where ``kgg`` is the
    kernel, ``q = dK/dw_j[d]`` and ``s = d2K/dw_j[d] dw_l[d]``.  With
    ``grad`` also returns the derivatives of each term with respect to the
    lag components (shape (..., P)) and with respect to ``a``.
    """
    r = np.sqrt(np.sum(H * H, axis=-1))
    pos = r > 0
    rs = np.where(pos, r, 1.0)
    e = np.exp(-a * r)
    hd = H[..., d]
    c = np.where(pos, hd * hd / rs, 0.0)  # hd^2 / r
    kgg = xi2 * (1 + a * r) * e
    q = xi2 * a * a * e * hd
    s = xi2 * a * a * e * (1 - a * c)
    if not grad:
        return kgg, q, s
    P = H.shape[-1]
    unit = np.where(pos[..., None], H / rs[..., None], 0.0)  # h / r
    delta = np.zeros(P)
    delta[d] = 1.0
    dkgg_dh = -xi2 * a * a * e[..., None] * H
    dq_dh = xi2 * a * a * e[..., None] * (delta - a * hd[..., None] * unit)
    ds_dh = -xi2 * a**3 * e[..., None] * (
        unit - a * c[..., None] * unit + np.where(pos[..., None], 2 * hd[..., None] * delta / rs[..., None], 0.0)
        - c[..., None] * unit / rs[..., None]
    )
    ds_dh = np.where(pos[..., None], ds_dh, 0.0)
    dkgg_da = -xi2 * a * r * r * e
    dq_da = xi2 * hd * e * (2 * a - a * a * r)
    ds_da = xi2 * e * (2 * a - 3 * a * a * c - a * a * r + a**3 * hd * hd)
    return kgg, q, s, (dkgg_dh, dq_dh, ds_dh), (dkgg_da, dq_da, ds_da)
