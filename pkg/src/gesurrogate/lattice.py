"""Potts and autologistic lattice models.

Images live on a rectangular lattice with free (non-wrapping) boundary and
4-nearest-neighbour interactions.  The likelihood of an image ``z`` is
``exp(beta . s(z)) / C(beta)`` where ``s`` are the sufficient statistics:

* Potts-k: ``[#matching neighbour pairs]``, labels ``1..k``.
* autologistic: ``[sum of labels, #matching neighbour pairs]``, labels ``-1/+1``.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import logsumexp

from . import _kernels
from .errors import EnumerationRefusedError, InvalidInputError, UnsupportedRegimeError
from .rng import stream

POTTS = "potts"
AUTOLOGISTIC = "autologistic"
ENUMERATION_LIMIT = 2**24
_UNIFORM_BLOCK = 1 << 20


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    k: int = 2

    def __post_init__(self):
        if self.kind not in (POTTS, AUTOLOGISTIC):
            raise InvalidInputError(f"unknown model kind {self.kind!r}")
        if self.kind == POTTS and self.k < 2:
            raise InvalidInputError("Potts model needs k >= 2")
        if self.kind == AUTOLOGISTIC and self.k != 2:
            raise InvalidInputError("autologistic model has exactly 2 labels")

    @classmethod
    def potts(cls, k):
        return cls(POTTS, int(k))

    @classmethod
    def autologistic(cls):
        return cls(AUTOLOGISTIC, 2)

    @property
    def D(self):
        return 1 if self.kind == POTTS else 2

    @property
    def alphabet(self):
        if self.kind == POTTS:
            return np.arange(1, self.k + 1, dtype=np.int64)
        return np.array([-1, 1], dtype=np.int64)

    def to_dict(self):
        return {"kind": self.kind, "k": self.k}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], int(d.get("k", 2)))


@dataclass
class LabelImage:
    """Row-major lattice of integer labels, stored as a (height, width) array."""

    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 2 or self.labels.size < 1:
            raise InvalidInputError("labels must be a non-empty 2-D array")

    @property
    def height(self):
        return self.labels.shape[0]

    @property
    def width(self):
        return self.labels.shape[1]

    @property
    def shape(self):
        return self.labels.shape

    def validate(self, spec):
        if not np.isin(self.labels, spec.alphabet).all():
            raise InvalidInputError(f"image contains labels outside {spec.alphabet.tolist()}")
        return self

    def to_text(self, spec):
        lines = [f"LBL {self.width} {self.height} {spec.k}"]
        lines += [" ".join(str(v) for v in row) for row in self.labels]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        tokens = text.split()
        if len(tokens) < 4 or tokens[0] != "LBL":
            raise InvalidInputError("missing 'LBL <width> <height> <k>' header")
        width, height = int(tokens[1]), int(tokens[2])
        values = np.array([int(t) for t in tokens[4:]], dtype=np.int64)
        if values.size != width * height:
            raise InvalidInputError(f"expected {width * height} labels, found {values.size}")
        return cls(values.reshape(height, width))

    def save(self, path, spec):
        with open(path, "w") as fh:
            fh.write(self.to_text(spec))

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_text(fh.read())


def as_beta(beta, spec):
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    if beta.shape != (spec.D,):
        raise InvalidInputError(f"{spec.kind} model takes {spec.D} parameter(s), got {beta.shape}")
    return beta


def _as_labels(image):
    return image.labels if isinstance(image, LabelImage) else np.asarray(image)


def sufficient_stats(image, spec):
    """Sufficient statistic vector of ``image``; each neighbour pair counted once."""
    z = _as_labels(image)
    if not np.isin(z, spec.alphabet).all():
        raise InvalidInputError(f"image contains labels outside {spec.alphabet.tolist()}")
    pairs = np.count_nonzero(z[:, 1:] == z[:, :-1]) + np.count_nonzero(z[1:, :] == z[:-1, :])
    if spec.kind == POTTS:
        return np.array([pairs], dtype=float)
    return np.array([z.sum(), pairs], dtype=float)


def n_pairs(shape):
    h, w = shape
    return h * (w - 1) + w * (h - 1)


def critical_beta(k):
    """Critical inverse temperature ``log(1 + sqrt(k))`` of the square-lattice Potts model."""
    if k < 2:
        raise InvalidInputError("critical_beta needs k >= 2")
    return float(np.log1p(np.sqrt(k)))


# --------------------------------------------------------------------------
# exhaustive enumeration


def _check_enumerable(spec, shape):
    n = int(shape[0]) * int(shape[1])
    if n < 1:
        raise InvalidInputError("lattice must have at least one site")
    if spec.k**n > ENUMERATION_LIMIT:
        raise EnumerationRefusedError(
            f"{spec.k}^{n} configurations exceeds the enumeration limit {ENUMERATION_LIMIT}"
        )


@lru_cache(maxsize=32)
def _density_of_states(kind, k, height, width):
    """Distinct statistic vectors and the number of configurations producing each."""
    spec = ModelSpec(kind, k)
    n = height * width
    n_p = n_pairs((height, width))
    # statistic vector -> flat code; label sum shifted to be nonnegative
    base = n_p + 1
    ncodes = base if kind == POTTS else base * (2 * n + 1)
    counts = _kernels.enumerate_counts(k, height, width, spec.alphabet, kind != POTTS, ncodes, base)
    nz = np.nonzero(counts)[0]
    if kind == POTTS:
        stats = nz[:, None].astype(float)
    else:
        stats = np.column_stack([nz // base - n, nz % base]).astype(float)
    return stats, counts[nz].astype(float)


def density_of_states(spec, shape):
    """Return ``(stats, counts)``: every attainable statistic and its multiplicity."""
    _check_enumerable(spec, shape)
    return _density_of_states(spec.kind, spec.k, int(shape[0]), int(shape[1]))


def exact_log_normconst(spec, beta, shape):
    """``log C(beta)`` by exhaustive enumeration over all label configurations."""
    beta = as_beta(beta, spec)
    stats, counts = density_of_states(spec, shape)
    return float(logsumexp(stats @ beta, b=counts))


def exact_moments(spec, beta, shape):
    """Exact mean and variance of each sufficient statistic at ``beta``."""
    beta = as_beta(beta, spec)
    stats, counts = density_of_states(spec, shape)
    logw = stats @ beta + np.log(counts)
    w = np.exp(logw - logw.max())
    w /= w.sum()
    mu = w @ stats
    sigma2 = w @ (stats - mu) ** 2
    return mu, sigma2


def exact_loglik(spec, beta, s_obs, shape):
    """Exact log-likelihood ``beta . s_obs - log C(beta)``."""
    beta = as_beta(beta, spec)
    return float(beta @ np.asarray(s_obs, dtype=float) - exact_log_normconst(spec, beta, shape))


# --------------------------------------------------------------------------
# samplers


def random_image(spec, shape, rng):
    return LabelImage(rng.choice(spec.alphabet, size=tuple(shape)))


def _uniform_blocks(rng, sweeps, per_sweep):
    rows = max(1, _UNIFORM_BLOCK // per_sweep)
    done = 0
    while done < sweeps:
        m = min(rows, sweeps - done)
        yield rng.random((m, per_sweep))
        done += m


def _sw_inplace(flat, shape, k, beta1, sweeps, rng):
    h, w = shape
    p_bond = -np.expm1(-beta1)
    for block in _uniform_blocks(rng, sweeps, 3 * h * w):
        _kernels.sw_sweeps(flat, h, w, k, p_bond, block)


def _gibbs_inplace(flat, shape, spec, beta, sweeps, rng):
    h, w = shape
    if spec.kind == POTTS:
        field, coupling = 0.0, float(beta[0])
    else:
        field, coupling = float(beta[0]), float(beta[1])
    alphabet = spec.alphabet
    for block in _uniform_blocks(rng, sweeps, h * w):
        _kernels.gibbs_sweeps(flat, h, w, alphabet, field, coupling, block)


def _check_sweeps(sweeps):
    if int(sweeps) < 1:
        raise InvalidInputError("sweeps must be >= 1")
    return int(sweeps)


def sw_sample(spec, beta, init, sweeps, seed):
    """Run ``sweeps`` Swendsen-Wang updates from ``init``; deterministic in ``seed``."""
    beta = as_beta(beta, spec)
    sweeps = _check_sweeps(sweeps)
    if spec.kind != POTTS:
        raise UnsupportedRegimeError("Swendsen-Wang needs a pure pairwise model; use gibbs_sample")
    if beta[0] < 0:
        raise UnsupportedRegimeError("Swendsen-Wang bond probability undefined for beta < 0")
    init = LabelImage(np.array(_as_labels(init))).validate(spec)
    flat = init.labels.ravel().copy()
    _sw_inplace(flat, init.shape, spec.k, float(beta[0]), sweeps, stream(seed))
    return LabelImage(flat.reshape(init.shape))


def gibbs_sample(spec, beta, init, sweeps, seed):
    """Run ``sweeps`` raster-scan Gibbs sweeps from ``init``; deterministic in ``seed``."""
    beta = as_beta(beta, spec)
    sweeps = _check_sweeps(sweeps)
    init = LabelImage(np.array(_as_labels(init))).validate(spec)
    flat = init.labels.ravel().copy()
    _gibbs_inplace(flat, init.shape, spec, beta, sweeps, stream(seed))
    return LabelImage(flat.reshape(init.shape))


def default_sampler(spec, beta):
    if spec.kind == POTTS and beta[0] >= 0:
        return "sw"
    return "gibbs"


def _flat_stats(flat, shape, spec):
    h, w = shape
    pairs = _kernels.pair_matches(flat, h, w)
    if spec.kind == POTTS:
        return np.array([pairs], dtype=float)
    return np.array([flat.sum(), pairs], dtype=float)


def chain_stats(spec, beta, shape, burnin, n_records, thin, rng, init=None, sampler=None):
    """Run one chain and record sufficient statistics.

    ``burnin`` sweeps are discarded, then the statistics are recorded every
    ``thin`` sweeps, ``n_records`` times.  Starts from a uniformly random
    image unless ``init`` is given.  Returns an ``(n_records, D)`` array.
    """
    beta = as_beta(beta, spec)
    sampler = sampler or default_sampler(spec, beta)
    if sampler == "sw" and (spec.kind != POTTS or beta[0] < 0):
        raise UnsupportedRegimeError("Swendsen-Wang only supports Potts with beta >= 0")
    shape = tuple(int(x) for x in shape)
    if init is None:
        flat = rng.choice(spec.alphabet, size=shape[0] * shape[1])
    else:
        flat = _as_labels(init).ravel().astype(np.int64).copy()

    def advance(n):
        if n <= 0:
            return
        if sampler == "sw":
            _sw_inplace(flat, shape, spec.k, float(beta[0]), n, rng)
        else:
            _gibbs_inplace(flat, shape, spec, beta, n, rng)

    advance(int(burnin))
    out = np.empty((int(n_records), spec.D))
    for i in range(int(n_records)):
        advance(int(thin))
        out[i] = _flat_stats(flat, shape, spec)
    return out


def simulate_stats(spec, beta, shape, burnin, rng, sampler=None):
    """Statistics of one pseudo-dataset: a fresh chain from a random image, ``burnin`` sweeps."""
    return chain_stats(spec, beta, shape, max(int(burnin) - 1, 0), 1, 1, rng, sampler=sampler)[0]
