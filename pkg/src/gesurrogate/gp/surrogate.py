"""Gaussian-process surrogates for the moments of the sufficient statistics.

Three kinds share one implementation:

``S-GP``
    stationary GP on the sample means (identity warping).
``NS-GP``
    GP on the sample means composed with an axial warping of the inputs.
``GE-NS-GP``
    bivariate GP for the sample means and variances, where the variance
    process is the derivative of the mean process with respect to the
    statistic's own natural parameter.  Observations ``(m, v)`` are
    conditioned on jointly through the cross-covariance blocks.

Each statistic ``d`` gets its own independent model with a constant trend
fixed at the average of the observed sample means; the trend of the
derivative process is therefore zero.
"""

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize
from scipy.special import expit

from ..errors import FitFailedError, IllConditionedError, InvalidInputError
from ..rng import stream
from ..training import TrainingTable
from .kernel import Matern32Kernel, pair_terms
from .warping import AxialWarping

S_GP = "S-GP"
NS_GP = "NS-GP"
GE_NS_GP = "GE-NS-GP"
KINDS = (S_GP, NS_GP, GE_NS_GP)
FORMAT_VERSION = 1

JITTER_START = 1e-12
JITTER_MAX = 1e-6
VARIANCE_FLOOR = 1e-12
_LOG2PI = np.log(2 * np.pi)


@dataclass
class OptimizerConfig:
    n_starts: int = 5
    max_evals: int = 500
    n_basis: int = 100
    n_layers: int = 1
    sharpness: float = None
    condition_on: str = "all"  # GE-NS-GP: "all" uses (m, v); "means" uses m only
    # inverse length-scale search range, in units of 1 / (input span)
    a_range: tuple = (0.1, 1e4)


def _softplus(u):
    return np.logaddexp(0.0, u)


def _softplus_inv(y):
    return np.log(np.expm1(y))


# --------------------------------------------------------------------------
# covariance assembly


def joint_cov(xi2, a, W1, G1, W2, G2, d, types1, types2):
    """Covariance between two sets of process values.

    ``types`` is a boolean array, True where the entry is the derivative
    process ``h`` and False where it is the mean process ``g``.
    ``G`` are the warp derivatives in dimension ``d`` at each point.
    """
    H = W2[None, :, :] - W1[:, None, :]
    kgg, q, s = pair_terms(xi2, a, H, d)
    t1 = types1[:, None]
    t2 = types2[None, :]
    return np.where(
        ~t1 & ~t2,
        kgg,
        np.where(
            t1 & ~t2,
            q * G1[:, None],
            np.where(~t1 & t2, -q * G2[None, :], s * G1[:, None] * G2[None, :]),
        ),
    )


def cross_cov_block(kernel, warping, beta_j, beta_l, d=0):
    """2x2 block ``[[cov(g_j, g_l), cov(g_j, h_l)], [cov(h_j, g_l), cov(h_j, h_l)]]``."""
    x = np.vstack([np.reshape(beta_j, (1, -1)), np.reshape(beta_l, (1, -1))])
    W, G = warping.warp_with_deriv(x, d)
    types = np.array([False, True])
    Wj = np.repeat(W[:1], 2, axis=0)
    Wl = np.repeat(W[1:], 2, axis=0)
    Gj = np.repeat(G[:1], 2)
    Gl = np.repeat(G[1:], 2)
    return joint_cov(kernel.xi2, kernel.a, Wj, Gj, Wl, Gl, d, types, types)


def _cholesky(K):
    """Cholesky factor with jitter proportional to the diagonal, escalated up to JITTER_MAX."""
    diag = np.diag(K).copy()
    try:
        return np.linalg.cholesky(K), 0.0
    except np.linalg.LinAlgError:
        pass
    jitter = JITTER_START
    while jitter <= JITTER_MAX * (1 + 1e-9):
        try:
            return np.linalg.cholesky(K + np.diag(jitter * diag)), jitter
        except np.linalg.LinAlgError:
            jitter *= 10
    raise IllConditionedError("training covariance is not positive definite after maximum jitter")


# --------------------------------------------------------------------------
# single-statistic model


@dataclass
class StatisticGP:
    """Conditioned GP for one sufficient statistic ``d``."""

    kind: str
    d: int
    trend: float
    kernel: Matern32Kernel
    warping: AxialWarping
    X: np.ndarray  # (p, P) training inputs
    m: np.ndarray  # (p,)
    v: np.ndarray  # (p,)
    tau2_mu: np.ndarray
    tau2_sigma: np.ndarray
    use_variances: bool
    _chol: np.ndarray = field(default=None, repr=False)
    _alpha: np.ndarray = field(default=None, repr=False)
    jitter: float = 0.0

    def __post_init__(self):
        self._factorize()

    @property
    def obs_types(self):
        p = self.X.shape[0]
        if self.use_variances:
            return np.r_[np.zeros(p, bool), np.ones(p, bool)]
        return np.zeros(p, bool)

    def _obs_inputs(self):
        W, G = self.warping.warp_with_deriv(self.X, self.d)
        if self.use_variances:
            return np.vstack([W, W]), np.r_[G, G]
        return W, G

    def _obs_vector(self):
        if self.use_variances:
            return np.r_[self.m - self.trend, self.v], np.r_[self.tau2_mu, self.tau2_sigma]
        return self.m - self.trend, self.tau2_mu.copy()

    def _factorize(self):
        W, G = self._obs_inputs()
        types = self.obs_types
        y, noise = self._obs_vector()
        K = joint_cov(self.kernel.xi2, self.kernel.a, W, G, W, G, self.d, types, types)
        K[np.diag_indices_from(K)] += noise
        self._chol, self.jitter = _cholesky(K)
        self._alpha = cho_solve((self._chol, True), y)

    def restrict_to_means(self):
        """Same hyperparameters, conditioned on the sample means only."""
        return StatisticGP(self.kind, self.d, self.trend, self.kernel, self.warping, self.X, self.m,
                           self.v, self.tau2_mu, self.tau2_sigma, False)

    def log_marginal_likelihood(self):
        y, _ = self._obs_vector()
        return float(-0.5 * y @ self._alpha - np.log(np.diag(self._chol)).sum() - 0.5 * y.size * _LOG2PI)

    def _cross(self, xs):
        """Covariance between targets [g(xs); h(xs)] and the observations."""
        Ws, Gs = self.warping.warp_with_deriv(xs, self.d)
        W, G = self._obs_inputs()
        n = xs.shape[0]
        tt = np.r_[np.zeros(n, bool), np.ones(n, bool)]
        return joint_cov(self.kernel.xi2, self.kernel.a, np.vstack([Ws, Ws]), np.r_[Gs, Gs], W, G, self.d,
                         tt, self.obs_types), Gs

    def predict(self, xs, full_cov=False):
        """Posterior means of ``g`` and ``h`` at ``xs`` (n, P).

        With ``full_cov`` also returns the per-point 2x2 posterior covariance
        of ``(g, h)``, shape (n, 2, 2).
        """
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        n = xs.shape[0]
        Kx, Gs = self._cross(xs)
        mean = Kx @ self._alpha
        mu = self.trend + mean[:n]
        dmu = mean[n:]
        if not full_cov:
            return mu, dmu
        V = solve_triangular(self._chol, Kx.T, lower=True)
        Vg, Vh = V[:, :n], V[:, n:]
        xi2, a = self.kernel.xi2, self.kernel.a
        cov = np.empty((n, 2, 2))
        cov[:, 0, 0] = xi2 - np.sum(Vg * Vg, axis=0)
        cov[:, 1, 1] = xi2 * a * a * Gs * Gs - np.sum(Vh * Vh, axis=0)
        cov[:, 0, 1] = cov[:, 1, 0] = -np.sum(Vg * Vh, axis=0)
        return mu, dmu, cov

    def to_dict(self):
        return {
            "d": self.d,
            "trend": self.trend,
            "xi2": self.kernel.xi2,
            "a": self.kernel.a,
            "use_variances": self.use_variances,
            "warping": self.warping.to_dict(),
        }


# --------------------------------------------------------------------------
# marginal likelihood with analytic gradient


class _Objective:
    """Negative log marginal likelihood over unconstrained hyperparameters.

    Parameter vector: ``[log xi2, log a, u]`` where the warping weights are
    ``softplus(u)`` reshaped to (n_layers, P, n_basis + 1).
    """

    def __init__(self, X, y, noise, d, use_variances, template):
        self.X = X
        self.y = y
        self.noise = noise
        self.d = d
        self.use_variances = use_variances
        self.template = template
        self.P = X.shape[1]
        self.wshape = (template.n_layers, self.P, template.n_basis + 1)
        p = X.shape[0]
        self.types = np.r_[np.zeros(p, bool), np.ones(p, bool)] if use_variances else np.zeros(p, bool)

    @property
    def size(self):
        return 2 + int(np.prod(self.wshape))

    def unpack(self, theta):
        xi2 = float(np.exp(theta[0]))
        a = float(np.exp(theta[1]))
        u = np.reshape(theta[2:], self.wshape)
        warping = self.template.with_layers(list(_softplus(u)))
        return xi2, a, u, warping

    def pack(self, xi2, a, warping):
        u = np.array([_softplus_inv(np.maximum(w, 1e-300)) for w in warping.layers]).ravel()
        return np.r_[np.log(xi2), np.log(a), u]

    def value_and_grad(self, theta, with_grad=True):
        xi2, a, u, warping = self.unpack(theta)
        p = self.X.shape[0]
        Wp, Gp = warping.warp_with_deriv(self.X, self.d)
        if self.use_variances:
            W, G = np.vstack([Wp, Wp]), np.r_[Gp, Gp]
        else:
            W, G = Wp, Gp
        H = W[None, :, :] - W[:, None, :]
        terms = pair_terms(xi2, a, H, self.d, grad=with_grad)
        kgg, q, s = terms[:3]
        t1 = self.types[:, None]
        t2 = self.types[None, :]
        gg_mask = ~t1 & ~t2
        hg_mask = t1 & ~t2
        gh_mask = ~t1 & t2
        hh_mask = t1 & t2
        Gr, Gc = G[:, None], G[None, :]
        Ksig = np.where(gg_mask, kgg, np.where(hg_mask, q * Gr, np.where(gh_mask, -q * Gc, s * Gr * Gc)))
        K = Ksig + np.diag(self.noise)
        try:
            L, jitter = _cholesky(K)
        except IllConditionedError:
            return np.inf, None
        if jitter:
            K = K + np.diag(jitter * np.diag(K))
        alpha = cho_solve((L, True), self.y)
        nll = 0.5 * self.y @ alpha + np.log(np.diag(L)).sum() + 0.5 * self.y.size * _LOG2PI
        if not with_grad:
            return float(nll), None
        Kinv = cho_solve((L, True), np.eye(K.shape[0]))
        A = np.outer(alpha, alpha) - Kinv  # dL/dK = A / 2
        grad = np.zeros(self.size)
        # log xi2: every signal entry is proportional to xi2
        grad[0] = 0.5 * np.sum(A * Ksig)
        dkgg_dh, dq_dh, ds_dh = terms[3]
        dkgg_da, dq_da, ds_da = terms[4]
        dK_da = np.where(gg_mask, dkgg_da, np.where(hg_mask, dq_da * Gr, np.where(gh_mask, -dq_da * Gc, ds_da * Gr * Gc)))
        grad[1] = 0.5 * a * np.sum(A * dK_da)
        if warping.n_layers == 0:
            return float(nll), -grad
        # lag derivatives; K_jl depends on W_l - W_j
        B = 0.5 * (
            (A * gg_mask)[..., None] * dkgg_dh
            + (A * hg_mask * Gr)[..., None] * dq_dh
            - (A * gh_mask * Gc)[..., None] * dq_dh
            + (A * hh_mask * Gr * Gc)[..., None] * ds_dh
        )
        gW = B.sum(axis=0) - B.sum(axis=1)  # (n, P)
        gG = np.sum(A * hg_mask * q, axis=1) + np.sum(A * hh_mask * s * Gc, axis=1)
        if self.use_variances:
            gW = gW[:p] + gW[p:]
            gG = gG[:p] + gG[p:]
        wgrad = np.empty(self.wshape)
        for i in range(self.P):
            wgrad[:, i, :] = warping.backward(self.X, i, gW[:, i], gG if i == self.d else None)
        grad[2:] = (wgrad * expit(u)).ravel()
        return float(nll), -grad  # gradient of the negative log likelihood

    def __call__(self, theta):
        val, grad = self.value_and_grad(theta)
        if not np.isfinite(val):
            return 1e25, np.zeros(self.size)
        return val, grad


def _fit_statistic(kind, table, d, config, seed):
    X = table.points
    m = table.m[:, d]
    v = table.v[:, d]
    trend = float(np.mean(m))
    bounds = table.bounds
    span = float(np.max(bounds[:, 1] - bounds[:, 0]))
    use_var = kind == GE_NS_GP
    if kind == S_GP:
        template = AxialWarping.identity(bounds, n_basis=config.n_basis)
    else:
        template = AxialWarping.create(bounds, n_basis=config.n_basis, n_layers=config.n_layers,
                                       sharpness=config.sharpness)
    y = np.r_[m - trend, v] if use_var else m - trend
    noise = np.r_[table.tau2_mu[:, d], table.tau2_sigma[:, d]] if use_var else table.tau2_mu[:, d].copy()
    obj = _Objective(X, y, noise, d, use_var, template)

    var0 = max(float(np.var(m)), 1e-8)
    a0 = 10.0 / span
    theta0 = obj.pack(var0, a0, template) if template.n_layers else np.array([np.log(var0), np.log(a0)])
    lo = np.full(obj.size, -30.0)
    hi = np.full(obj.size, 30.0)
    lo[0], hi[0] = np.log(var0) - 15, np.log(var0) + 15
    lo[1], hi[1] = np.log(config.a_range[0] / span), np.log(config.a_range[1] / span)
    box = list(zip(lo, hi))

    rng = stream(seed, d)
    init_nll = obj.value_and_grad(theta0, with_grad=False)[0]
    best = None
    for start in range(config.n_starts):
        if start == 0:
            t0 = theta0.copy()
        else:
            t0 = theta0 + rng.normal(0.0, 1.0, size=obj.size)
            t0 = np.clip(t0, lo, hi)
        res = minimize(obj, t0, jac=True, method="L-BFGS-B", bounds=box,
                       options={"maxfun": config.max_evals, "maxiter": config.max_evals})
        if not np.isfinite(res.fun) or res.fun >= 1e25:
            continue
        if best is None or res.fun < best.fun:
            best = res
    if best is None:
        raise FitFailedError(f"no finite objective for statistic {d}", {"theta0": theta0.tolist()})
    xi2, a, _, warping = obj.unpack(best.x)
    if not (np.isfinite(xi2) and np.isfinite(a)):
        raise FitFailedError("non-finite hyperparameters", {"xi2": xi2, "a": a})
    use_in_prediction = use_var and config.condition_on == "all"
    model = StatisticGP(kind, d, trend, Matern32Kernel(xi2, a), warping, X, m, v,
                        table.tau2_mu[:, d].copy(), table.tau2_sigma[:, d].copy(), use_in_prediction)
    diag = {"initial_lml": -init_nll, "lml": -float(best.fun), "evaluations": int(best.nfev)}
    return model, diag


# --------------------------------------------------------------------------
# fitted surrogate


@dataclass
class FittedSurrogate:
    kind: str
    bounds: np.ndarray
    models: list
    table: TrainingTable = None
    diagnostics: list = field(default_factory=list)

    @property
    def D(self):
        return len(self.models)

    def _points(self, beta_star):
        x = np.atleast_2d(np.asarray(beta_star, dtype=float))
        if x.shape[1] != self.bounds.shape[0]:
            x = x.reshape(-1, self.bounds.shape[0])
        return x

    def log_marginal_likelihood(self):
        return float(sum(mdl.log_marginal_likelihood() for mdl in self.models))

    def predict(self, beta_star, floor=False):
        """Plugin surrogate mean and variance at each row of ``beta_star``; shapes (n, D)."""
        x = self._points(beta_star)
        mu = np.empty((x.shape[0], self.D))
        s2 = np.empty((x.shape[0], self.D))
        for d, mdl in enumerate(self.models):
            mu[:, d], s2[:, d] = mdl.predict(x)
        if floor:
            s2 = np.maximum(s2, VARIANCE_FLOOR)
        return mu, s2

    def posterior(self, beta_star):
        """Posterior means (n, D, 2) and covariances (n, D, 2, 2) of ``(g, h)``."""
        x = self._points(beta_star)
        means = np.empty((x.shape[0], self.D, 2))
        covs = np.empty((x.shape[0], self.D, 2, 2))
        for d, mdl in enumerate(self.models):
            mu, dmu, cov = mdl.predict(x, full_cov=True)
            means[:, d, 0], means[:, d, 1] = mu, dmu
            covs[:, d] = cov
        return means, covs

    def restrict_to_means(self):
        return FittedSurrogate(self.kind, self.bounds, [m.restrict_to_means() for m in self.models], self.table)

    # -- serialization --------------------------------------------------

    def to_dict(self):
        return {
            "format": "gesurrogate.FittedSurrogate",
            "version": FORMAT_VERSION,
            "kind": self.kind,
            "bounds": self.bounds.tolist(),
            "models": [m.to_dict() for m in self.models],
            "table_sha256": self.table.digest() if self.table is not None else None,
            "table": {"csv": self.table.to_csv(), "sidecar": self.table.sidecar()} if self.table is not None else None,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def from_dict(cls, doc):
        if doc.get("version") != FORMAT_VERSION:
            raise InvalidInputError(f"unsupported surrogate format version {doc.get('version')}")
        table = TrainingTable.from_csv(doc["table"]["csv"], doc["table"]["sidecar"])
        if hashlib.sha256(doc["table"]["csv"].encode()).hexdigest() != doc["table_sha256"]:
            raise InvalidInputError("embedded training table does not match its hash")
        models = []
        for md in doc["models"]:
            d = md["d"]
            models.append(StatisticGP(
                doc["kind"], d, md["trend"], Matern32Kernel(md["xi2"], md["a"]),
                AxialWarping.from_dict(md["warping"]), table.points, table.m[:, d], table.v[:, d],
                table.tau2_mu[:, d], table.tau2_sigma[:, d], md["use_variances"],
            ))
        return cls(doc["kind"], np.asarray(doc["bounds"], dtype=float), models, table)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def build_surrogate(kind, table, kernels, warpings, condition_on="all"):
    """Condition a surrogate with given hyperparameters (no optimisation)."""
    if kind not in KINDS:
        raise InvalidInputError(f"unknown surrogate kind {kind!r}")
    models = []
    for d in range(table.D):
        warping = warpings[d] if kind != S_GP else AxialWarping.identity(table.bounds)
        m = table.m[:, d]
        models.append(StatisticGP(kind, d, float(np.mean(m)), kernels[d], warping, table.points, m,
                                  table.v[:, d], table.tau2_mu[:, d], table.tau2_sigma[:, d],
                                  kind == GE_NS_GP and condition_on == "all"))
    return FittedSurrogate(kind, table.bounds, models, table)


def fit(kind, table, config=None, seed=0):
    """Maximum-likelihood fit of a surrogate of the given ``kind`` to ``table``."""
    if kind not in KINDS:
        raise InvalidInputError(f"unknown surrogate kind {kind!r}")
    if table.p < 3:
        raise InvalidInputError("need at least 3 design points")
    if table.points.shape[1] != table.D:
        raise InvalidInputError("each statistic needs its own natural-parameter dimension")
    config = config or OptimizerConfig()
    models, diags = [], []
    for d in range(table.D):
        model, diag = _fit_statistic(kind, table, d, config, seed)
        models.append(model)
        diags.append(diag)
    return FittedSurrogate(kind, table.bounds, models, table, diags)


def predict_plugin(fitted, beta_star, floor=False):
    """Surrogate mean and variance (derivative of the predictive mean) at one point; length-D arrays."""
    mu, s2 = fitted.predict(np.reshape(beta_star, (1, -1)), floor=floor)
    return mu[0], s2[0]


def predict_sampled(fitted, beta_star, r, seed):
    """Draw ``r`` joint posterior realisations of (mean, variance) at one point.

    Returns ``(mu_hat, sigma2_hat)``, each of shape (r, D); each realisation's
    variance is the derivative of that realisation.
    """
    if r < 1:
        raise InvalidInputError("r must be >= 1")
    means, covs = fitted.posterior(np.reshape(beta_star, (1, -1)))
    rng = stream(seed)
    mu_hat = np.empty((r, fitted.D))
    s2_hat = np.empty((r, fitted.D))
    for d in range(fitted.D):
        cov = 0.5 * (covs[0, d] + covs[0, d].T)
        draws = _mvn(rng, means[0, d], cov, r)
        mu_hat[:, d], s2_hat[:, d] = draws[:, 0], draws[:, 1]
    return mu_hat, s2_hat


def _mvn(rng, mean, cov, r):
    """Gaussian draws via a symmetric square root; tolerates tiny negative eigenvalues."""
    vals, vecs = np.linalg.eigh(cov)
    scale = max(float(np.max(np.abs(vals))), 1e-300)
    if np.min(vals) < -1e-8 * scale:
        raise IllConditionedError(f"posterior covariance not positive semidefinite: eigenvalues {vals}")
    root = vecs * np.sqrt(np.clip(vals, 0.0, None))
    z = rng.standard_normal((r, mean.size))
    return mean + z @ root.T
