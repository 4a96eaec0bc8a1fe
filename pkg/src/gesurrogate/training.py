"""Design grids and simulated training tables of sample moments."""

import csv
import hashlib
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import ess_mcmc
from .errors import InvalidInputError, UnsupportedRegimeError
from .lattice import ModelSpec, chain_stats
from .rng import stream

TAU2_FLOOR = 1e-12


@dataclass
class Design:
    points: np.ndarray  # (p, P)
    bounds: np.ndarray  # (P, 2)

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.bounds = np.atleast_2d(np.asarray(self.bounds, dtype=float))
        if self.points.shape[1] != self.bounds.shape[0]:
            raise InvalidInputError("design points and bounds disagree on dimension")

    @property
    def p(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]


def _check_bounds(bounds):
    bounds = np.atleast_2d(np.asarray(bounds, dtype=float))
    if bounds.shape[1] != 2:
        raise InvalidInputError("bounds must be a list of [lo, hi] pairs")
    if np.any(bounds[:, 0] >= bounds[:, 1]):
        raise InvalidInputError(f"invalid bounds {bounds.tolist()}: need lo < hi")
    return bounds


def grid_axes(bounds, counts):
    bounds = _check_bounds(bounds)
    counts = np.broadcast_to(np.atleast_1d(counts), (bounds.shape[0],))
    if np.any(counts < 2):
        raise InvalidInputError("need at least 2 points per dimension")
    return [np.linspace(lo, hi, int(n)) for (lo, hi), n in zip(bounds, counts)]


def make_design(bounds, counts):
    """Full-factorial equally spaced grid including the endpoints.

    The first dimension varies slowest.
    """
    bounds = _check_bounds(bounds)
    axes = grid_axes(bounds, counts)
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.column_stack([m.ravel() for m in mesh])
    return Design(points, bounds)


def midpoint_test_design(design):
    """Midpoints between consecutive points of a sorted 1-D design."""
    if design.dim != 1:
        raise UnsupportedRegimeError("midpoint test designs are only defined in 1-D")
    x = np.sort(design.points[:, 0])
    return Design(((x[1:] + x[:-1]) / 2)[:, None], design.bounds)


@dataclass
class TrainingTable:
    """Sample moments of simulated sufficient statistics at each design point.

    Arrays ``m``, ``v``, ``tau2_mu`` and ``tau2_sigma`` have shape ``(p, D)``.
    """

    points: np.ndarray
    bounds: np.ndarray
    m: np.ndarray
    v: np.ndarray
    tau2_mu: np.ndarray
    tau2_sigma: np.ndarray
    q: int
    provenance: dict = field(default_factory=dict)

    @property
    def p(self):
        return self.points.shape[0]

    @property
    def D(self):
        return self.m.shape[1]

    @classmethod
    def from_samples(cls, points, bounds, samples, provenance=None, mc_error="iid"):
        """Reduce replicate statistics ``samples`` of shape ``(p, q, D)``.

        ``mc_error="iid"`` treats the q replicates as independent
        (``tau2_mu = v / q``, ``tau2_sigma = 2 v^2 / (q - 1)``).  ``"ess"``
        replaces q by the effective sample size of each replicate series,
        which matters when replicates come from one autocorrelated chain.
        """
        samples = np.asarray(samples, dtype=float)
        q = samples.shape[1]
        if q < 2:
            raise InvalidInputError("need q >= 2 replicates per design point")
        m = samples.mean(axis=1)
        v = samples.var(axis=1, ddof=1)
        if mc_error == "iid":
            return cls.from_moments(points, bounds, m, v, q, provenance)
        if mc_error != "ess":
            raise InvalidInputError(f"unknown mc_error {mc_error!r}")
        n_eff = np.empty_like(m)
        for j in range(samples.shape[0]):
            if q >= 10:
                n_eff[j] = ess_mcmc(samples[j])[0]
            else:
                n_eff[j] = q
        n_eff = np.clip(n_eff, 2.0, q)
        tau2_mu = np.maximum(v / n_eff, TAU2_FLOOR)
        tau2_sigma = np.maximum(2 * v**2 / (n_eff - 1), TAU2_FLOOR)
        return cls.from_moments(points, bounds, m, v, q, provenance, tau2_mu, tau2_sigma)

    @classmethod
    def from_moments(cls, points, bounds, m, v, q, provenance=None, tau2_mu=None, tau2_sigma=None):
        m = np.atleast_2d(np.asarray(m, dtype=float).T).T
        v = np.atleast_2d(np.asarray(v, dtype=float).T).T
        if tau2_mu is None:
            tau2_mu = np.maximum(v / q, TAU2_FLOOR)
        if tau2_sigma is None:
            tau2_sigma = np.maximum(2 * v**2 / (q - 1), TAU2_FLOOR)
        return cls(
            np.atleast_2d(np.asarray(points, dtype=float)),
            np.atleast_2d(np.asarray(bounds, dtype=float)),
            m,
            v,
            np.broadcast_to(np.asarray(tau2_mu, dtype=float), m.shape).copy(),
            np.broadcast_to(np.asarray(tau2_sigma, dtype=float), m.shape).copy(),
            int(q),
            dict(provenance or {}),
        )

    # -- serialization ---------------------------------------------------

    def to_csv(self):
        P = self.points.shape[1]
        header = ["d", "j"] + [f"beta_{i + 1}" for i in range(P)] + ["m", "v", "tau2_mu", "tau2_sigma", "q"]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        for d in range(self.D):
            for j in range(self.p):
                row = [d + 1, j + 1] + [repr(float(b)) for b in self.points[j]]
                row += [repr(float(x[j, d])) for x in (self.m, self.v, self.tau2_mu, self.tau2_sigma)]
                row.append(self.q)
                writer.writerow(row)
        return buf.getvalue()

    def sidecar(self):
        return {"bounds": self.bounds.tolist(), "q": self.q, "provenance": self.provenance}

    def save(self, csv_path, json_path=None):
        with open(csv_path, "w") as fh:
            fh.write(self.to_csv())
        json_path = json_path or str(csv_path) + ".json"
        with open(json_path, "w") as fh:
            json.dump(self.sidecar(), fh, indent=2, sort_keys=True)

    @classmethod
    def from_csv(cls, text, sidecar):
        rows = list(csv.DictReader(io.StringIO(text)))
        beta_cols = sorted((c for c in rows[0] if c.startswith("beta_")), key=lambda c: int(c[5:]))
        D = max(int(r["d"]) for r in rows)
        p = max(int(r["j"]) for r in rows)
        points = np.empty((p, len(beta_cols)))
        arrs = {name: np.empty((p, D)) for name in ("m", "v", "tau2_mu", "tau2_sigma")}
        for r in rows:
            d, j = int(r["d"]) - 1, int(r["j"]) - 1
            points[j] = [float(r[c]) for c in beta_cols]
            for name, arr in arrs.items():
                arr[j, d] = float(r[name])
        q = int(rows[0]["q"])
        return cls(points, np.asarray(sidecar["bounds"], dtype=float), arrs["m"], arrs["v"],
                   arrs["tau2_mu"], arrs["tau2_sigma"], q, sidecar.get("provenance", {}))

    @classmethod
    def load(cls, csv_path, json_path=None):
        json_path = json_path or str(csv_path) + ".json"
        with open(csv_path) as fh:
            text = fh.read()
        with open(json_path) as fh:
            side = json.load(fh)
        return cls.from_csv(text, side)

    def digest(self):
        return hashlib.sha256(self.to_csv().encode()).hexdigest()


def point_key(point):
    """Integer stream keys from the IEEE-754 bits of each coordinate."""
    return [int(b) for b in np.asarray(point, dtype=np.float64).view(np.uint64)]


def simulate_training_table(design, spec, shape, q, sweeps, burnin, seed, workers=1, sampler=None,
                            mc_error="ess", return_samples=False):
    """Simulate ``q`` thinned replicates at each design point and reduce to moments.

    Each design point runs one chain on its own random stream, keyed by
    ``seed`` and the bit pattern of the point's coordinates: ``burnin``
    discarded sweeps, then one record every ``sweeps`` sweeps.  Output is
    independent of ``workers``, and permuting the design permutes the rows.  Because the
    replicates share a chain, Monte Carlo error variances default to the
    effective-sample-size form (see ``TrainingTable.from_samples``).
    """
    if q < 2:
        raise InvalidInputError("need q >= 2 replicates per design point")
    if not isinstance(spec, ModelSpec):
        raise InvalidInputError("spec must be a ModelSpec")

    def run(j):
        rng = stream(seed, *point_key(design.points[j]))
        return chain_stats(spec, design.points[j], shape, burnin, q, sweeps, rng, sampler=sampler)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            samples = list(pool.map(run, range(design.p)))
    else:
        samples = [run(j) for j in range(design.p)]
    provenance = {
        "spec": spec.to_dict(),
        "shape": [int(shape[0]), int(shape[1])],
        "sweeps": int(sweeps),
        "burnin": int(burnin),
        "seed": int(seed),
        "sampler": sampler or "auto",
        "mc_error": mc_error,
    }
    samples = np.stack(samples)
    table = TrainingTable.from_samples(design.points, design.bounds, samples, provenance, mc_error)
    return (table, samples) if return_samples else table
