"""Gaussian synthetic likelihood and grid-approximated surrogate posteriors."""

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import DegeneratePosteriorError, InvalidInputError
from .rng import stream

log = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-12
PLUGIN = "plugin"
AVERAGED = "averaged"


def synthetic_loglik(s_obs, mu, sigma2, floor=False):
    """Sum over statistics of independent normal log densities.

    Broadcasts over leading dimensions of ``mu``/``sigma2`` (last axis is
    the statistic).  Without ``floor`` any nonpositive variance gives -inf.
    """
    s_obs = np.asarray(s_obs, dtype=float)
    mu = np.asarray(mu, dtype=float)
    sigma2 = np.asarray(sigma2, dtype=float)
    if floor:
        sigma2 = np.maximum(sigma2, VARIANCE_FLOOR)
    bad = np.any(~(sigma2 > 0), axis=-1)
    safe = np.where(sigma2 > 0, sigma2, 1.0)
    ll = -0.5 * np.sum(np.log(2 * np.pi * safe) + (s_obs - mu) ** 2 / safe, axis=-1)
    ll = np.where(bad, -np.inf, ll)
    return float(ll) if np.ndim(ll) == 0 else ll


def synthetic_loglik_averaged(s_obs, mu_hats, sigma2_hats, floor=False):
    """Log of the average likelihood over realisations (rows of ``mu_hats``)."""
    lls = np.atleast_1d(synthetic_loglik(s_obs, np.atleast_2d(mu_hats), np.atleast_2d(sigma2_hats), floor))
    if not np.any(np.isfinite(lls)):
        return -np.inf
    return float(logsumexp(lls) - np.log(lls.size))


@dataclass
class GridPosterior:
    """Unnormalised log posterior and normalised cell probabilities on a regular grid.

    ``points`` are cell centres (n, P) with the first dimension varying
    slowest; ``log_lik`` holds the surrogate log-likelihood alone.
    """

    points: np.ndarray
    bounds: np.ndarray
    counts: tuple
    log_density: np.ndarray
    log_lik: np.ndarray
    weights: np.ndarray
    cell_volume: float
    mode: str = PLUGIN
    n_floored: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def cell_widths(self):
        return (self.bounds[:, 1] - self.bounds[:, 0]) / np.asarray(self.counts)

    @property
    def density(self):
        return self.weights / self.cell_volume

    def mean(self):
        return self.weights @ self.points

    def sd(self):
        mu = self.mean()
        return np.sqrt(self.weights @ (self.points - mu) ** 2)

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        P = self.points.shape[1]
        writer.writerow([f"beta_{i + 1}" for i in range(P)] + ["log_density", "weight"])
        for x, ld, w in zip(self.points, self.log_density, self.weights):
            writer.writerow([repr(float(v)) for v in x] + [repr(float(ld)), repr(float(w))])
        return buf.getvalue()

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_csv())


def grid_points(bounds, counts):
    """Cell centres of a regular grid over ``bounds``; first dimension slowest."""
    bounds = np.atleast_2d(np.asarray(bounds, dtype=float))
    counts = tuple(int(c) for c in np.broadcast_to(np.atleast_1d(counts), (bounds.shape[0],)))
    if min(counts) < 2:
        raise InvalidInputError("grid needs at least 2 cells per dimension")
    axes = [lo + (np.arange(n) + 0.5) * (hi - lo) / n for (lo, hi), n in zip(bounds, counts)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh]), counts


def normalize_log(log_density):
    """Normalised probabilities from unnormalised log values (max-shift)."""
    log_density = np.asarray(log_density, dtype=float)
    top = np.max(log_density)
    if not np.isfinite(top):
        raise DegeneratePosteriorError("every grid point has zero posterior density")
    w = np.exp(log_density - top)
    return w / w.sum()


def surrogate_loglik(source, points, s_obs, mode=PLUGIN, r=100, seed=0, floor=True):
    """Surrogate log-likelihood at each row of ``points``.

    Returns ``(loglik, n_floored)``.  ``source`` is a fitted surrogate or a
    callable mapping points (n, P) to ``(mu, sigma2)`` of shape (n, D).
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if callable(source) and not hasattr(source, "posterior"):
        mu, s2 = source(points)
        n_floored = int(np.sum(np.asarray(s2) <= 0)) if floor else 0
        return np.atleast_1d(synthetic_loglik(s_obs, mu, s2, floor)), n_floored
    if mode == PLUGIN:
        mu, s2 = source.predict(points)
        n_floored = int(np.sum(s2 <= 0)) if floor else 0
        return np.atleast_1d(synthetic_loglik(s_obs, mu, s2, floor)), n_floored
    if mode != AVERAGED:
        raise InvalidInputError(f"unknown prediction mode {mode!r}")
    means, covs = source.posterior(points)
    n, D = means.shape[:2]
    rng = stream(seed)
    z = rng.standard_normal((n, D, r, 2))
    covs = 0.5 * (covs + np.swapaxes(covs, -1, -2))
    vals, vecs = np.linalg.eigh(covs)
    roots = vecs * np.sqrt(np.clip(vals, 0.0, None))[..., None, :]
    draws = means[:, :, None, :] + np.einsum("ndij,ndrj->ndri", roots, z)
    mu_hat = np.moveaxis(draws[..., 0], 1, 2)  # (n, r, D)
    s2_hat = np.moveaxis(draws[..., 1], 1, 2)
    n_floored = int(np.sum(s2_hat <= 0)) if floor else 0
    lls = synthetic_loglik(s_obs, mu_hat, s2_hat, floor)  # (n, r)
    with np.errstate(divide="ignore"):
        out = logsumexp(lls, axis=1) - np.log(r)
    return out, n_floored


def build_grid_posterior(source, bounds, counts, s_obs, mode=PLUGIN, r=100, seed=0, floor=True,
                         with_prior=True):
    """Grid approximation of the surrogate posterior under a uniform prior on ``bounds``.

    ``source`` is a fitted surrogate or any callable mapping points (n, P)
    to ``(mu, sigma2)`` arrays of shape (n, D).  ``mode`` selects plugin or
    averaged (``r`` realisations per point) prediction.
    """
    bounds = np.atleast_2d(np.asarray(bounds, dtype=float))
    points, counts = grid_points(bounds, counts)
    ll, n_floored = surrogate_loglik(source, points, s_obs, mode, r, seed, floor)
    volume = float(np.prod(bounds[:, 1] - bounds[:, 0]))
    log_prior = -np.log(volume) if with_prior else 0.0
    log_density = ll + log_prior
    weights = normalize_log(log_density)
    if n_floored:
        log.info("floored %d nonpositive surrogate variance(s) on the grid", n_floored)
    cell_volume = volume / float(np.prod(counts))
    meta = {"mode": mode, "r": r if mode == AVERAGED else None, "seed": seed if mode == AVERAGED else None}
    return GridPosterior(points, bounds, counts, log_density, ll, weights, cell_volume, mode, n_floored, meta)


def sample_grid(grid, T, seed, return_cells=False):
    """Draw ``T`` points: a cell by weight, then uniformly within the cell."""
    rng = stream(seed)
    cells = rng.choice(grid.weights.size, size=int(T), p=grid.weights)
    jitter = rng.random((int(T), grid.points.shape[1])) - 0.5
    samples = grid.points[cells] + jitter * grid.cell_widths
    return (samples, cells) if return_cells else samples


def surrogate_mle(grid):
    """Grid point maximising the surrogate likelihood; ties go to the lowest index."""
    return grid.points[int(np.argmax(grid.log_lik))].copy()
