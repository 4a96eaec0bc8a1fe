"""Posterior inference: exchange, delayed-acceptance MCMC and importance sampling.

All three target the posterior under a uniform prior on a box.  Auxiliary
pseudo-data come from a fresh Swendsen-Wang or Gibbs chain started at a
random image and run for ``SimConfig.burnin`` sweeps.
"""

import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import ess_is, ess_mcmc, mcse, weighted_moments
from .errors import InvalidInputError
from .lattice import ModelSpec, exact_loglik, simulate_stats
from .rng import stream
from .synlik import PLUGIN, build_grid_posterior, sample_grid, surrogate_loglik, surrogate_mle

log = logging.getLogger(__name__)

EXCHANGE = "exchange"
DELAYED_ACCEPTANCE = "delayed-acceptance"
IMPORTANCE_SAMPLING = "importance-sampling"
METHODS = (EXCHANGE, DELAYED_ACCEPTANCE, IMPORTANCE_SAMPLING)

IS_ESS_WARNING = 10.0
WEIGHT_DEGENERACY = "weight-degeneracy"

# stage codes stored per iteration
OUT_OF_SUPPORT = -1
REJECTED_STAGE1 = 0
REJECTED_STAGE2 = 1
ACCEPTED = 2


@dataclass
class ProposalSpec:
    """Gaussian random-walk proposal with independent coordinates."""

    sd: np.ndarray

    def __post_init__(self):
        self.sd = np.atleast_1d(np.asarray(self.sd, dtype=float))
        if not np.all(self.sd > 0):
            raise InvalidInputError("proposal standard deviations must be positive")

    @classmethod
    def from_posterior_sd(cls, sd):
        """Scale a posterior SD guess by ``2.4 / sqrt(P)``."""
        sd = np.atleast_1d(np.asarray(sd, dtype=float))
        return cls(2.4 / np.sqrt(sd.size) * sd)

    @classmethod
    def default(cls, bounds):
        """Scaled SD of the uniform prior, ``2.4 / sqrt(P) * width / sqrt(12)``."""
        bounds = _check_box(bounds)
        return cls.from_posterior_sd((bounds[:, 1] - bounds[:, 0]) / np.sqrt(12.0))


@dataclass
class SimConfig:
    """How auxiliary pseudo-data are simulated."""

    shape: tuple
    burnin: int = 50
    sampler: str = None

    def __post_init__(self):
        self.shape = tuple(int(x) for x in self.shape)
        if len(self.shape) != 2 or min(self.shape) < 1:
            raise InvalidInputError(f"invalid lattice shape {self.shape}")
        if self.burnin < 1:
            raise InvalidInputError("auxiliary chains need at least one sweep")

    def to_dict(self):
        return {"shape": list(self.shape), "burnin": int(self.burnin), "sampler": self.sampler}


@dataclass
class PosteriorTrace:
    """Samples and bookkeeping from one inference run.

    ``samples`` holds retained draws (after MCMC burn-in).  Per-iteration
    columns (``states``, ``proposals``, ``stage``, ``log_r1``, ``log_r2``,
    ``s_aux``) cover every iteration and feed the JSON-lines trace.
    """

    method: str
    samples: np.ndarray
    weights: np.ndarray = None
    accept: dict = field(default_factory=dict)
    wall_seconds: float = 0.0
    ess: np.ndarray = None
    ess_flags: list = field(default_factory=list)
    flags: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    columns: dict = field(default_factory=dict)

    @property
    def T(self):
        return self.samples.shape[0]

    def summary(self):
        return summarize(self)

    def records(self):
        """Per-iteration dictionaries, in iteration order."""
        cols = self.columns
        n = len(next(iter(cols.values()))) if cols else 0
        for i in range(n):
            rec = {"i": i}
            for name, arr in cols.items():
                v = arr[i]
                if np.ndim(v):
                    rec[name] = [_jsonable(x) for x in v]
                else:
                    rec[name] = _jsonable(v)
            yield rec

    def write(self, out_dir, prefix=None):
        """Write ``<prefix>.trace.jsonl``, ``.summary.json``, ``.samples.csv`` and ``.timing.json``.

        Everything except the timing file is a deterministic function of the
        configuration and seed.
        """
        prefix = prefix or self.method
        os.makedirs(out_dir, exist_ok=True)
        base = os.path.join(out_dir, prefix)
        with open(base + ".trace.jsonl", "w") as fh:
            for rec in self.records():
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        summ = summarize(self, timing=False)
        with open(base + ".summary.json", "w") as fh:
            json.dump(summ, fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(base + ".samples.csv", "w") as fh:
            P = self.samples.shape[1]
            head = [f"beta_{d + 1}" for d in range(P)] + (["weight"] if self.weights is not None else [])
            fh.write(",".join(head) + "\n")
            for i in range(self.T):
                row = [repr(float(x)) for x in self.samples[i]]
                if self.weights is not None:
                    row.append(repr(float(self.weights[i])))
                fh.write(",".join(row) + "\n")
        timing = summarize(self, timing=True)
        timing = {"wall_seconds": self.wall_seconds, "time_hours": timing["time_hours"],
                  "ess_per_hour": timing["ess_per_hour"]}
        with open(base + ".timing.json", "w") as fh:
            json.dump(timing, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return base


def _jsonable(v):
    v = float(v) if isinstance(v, (np.floating, float)) else v
    if isinstance(v, float):
        return v if np.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    return v


def summarize(trace, timing=True):
    """Posterior mean, SD, MCSE, ESS and (optionally) time per dimension.

    Weighted traces use self-normalised importance-sampling estimates.
    """
    x = trace.samples
    mean, sd = weighted_moments(x, trace.weights)
    if trace.weights is None:
        err = mcse(x) if x.shape[0] >= 10 else np.full(x.shape[1], np.nan)
    else:
        err = mcse(x, trace.weights)
    out = {
        "method": trace.method,
        "T": int(trace.T),
        "posterior_mean": [float(v) for v in mean],
        "posterior_sd": [float(v) for v in sd],
        "mcse": [float(v) for v in err],
        "ess": [float(v) for v in trace.ess],
        "ess_flags": list(trace.ess_flags),
        "accept": {k: int(v) for k, v in trace.accept.items()},
        "flags": list(trace.flags),
        "config": trace.config,
    }
    if timing:
        hours = trace.wall_seconds / 3600.0
        out["time_hours"] = hours
        out["ess_per_hour"] = [float(e / hours) if hours > 0 else float("inf") for e in trace.ess]
    return out


def summary_rows(summary):
    """Rows labelled as in a results table: mean, SD, time and ESS per hour."""
    rows = [("Posterior mean", summary["posterior_mean"]), ("Posterior SD", summary["posterior_sd"])]
    if "time_hours" in summary:
        rows.append(("Time (hours)", [summary["time_hours"]] * len(summary["posterior_mean"])))
        rows.append(("ESS/hour", summary["ess_per_hour"]))
    return rows


# --------------------------------------------------------------------------
# helpers


def _check_box(bounds):
    bounds = np.atleast_2d(np.asarray(bounds, dtype=float))
    if bounds.shape[1] != 2 or np.any(bounds[:, 0] >= bounds[:, 1]):
        raise InvalidInputError(f"invalid prior bounds {bounds.tolist()}")
    return bounds


def _in_box(beta, bounds):
    return bool(np.all(beta >= bounds[:, 0]) and np.all(beta <= bounds[:, 1]))


def _check_common(s_obs, spec, bounds, T, burnin):
    if not isinstance(spec, ModelSpec):
        raise InvalidInputError("spec must be a ModelSpec")
    s_obs = np.atleast_1d(np.asarray(s_obs, dtype=float))
    if s_obs.size != spec.D:
        raise InvalidInputError(f"observed statistics need length {spec.D}")
    bounds = _check_box(bounds)
    if bounds.shape[0] != spec.D:
        raise InvalidInputError(f"prior bounds need {spec.D} dimension(s)")
    if T < 1:
        raise InvalidInputError("T must be at least 1")
    if not 0 <= burnin < T:
        raise InvalidInputError("need 0 <= burnin < T")
    return s_obs, bounds


def _mcmc_init(init, bounds):
    beta = bounds.mean(axis=1) if init is None else np.atleast_1d(np.asarray(init, dtype=float)).copy()
    if beta.shape != (bounds.shape[0],) or not _in_box(beta, bounds):
        raise InvalidInputError("initial value must lie inside the prior box")
    return beta


def _surrogate_fn(surrogate, s_obs):
    def fn(beta):
        return float(surrogate_loglik(surrogate, beta[None, :], s_obs, PLUGIN, floor=True)[0][0])
    return fn


def _finish_mcmc(method, states, burnin, columns, accept, wall, config, flags):
    samples = states[burnin:]
    if samples.shape[0] >= 10:
        ess, eflags = ess_mcmc(samples)
    else:
        ess, eflags = np.full(samples.shape[1], float(samples.shape[0])), ["short"] * samples.shape[1]
    return PosteriorTrace(method, samples, None, accept, wall, ess, eflags, flags, config, columns)


def _run_chain(method, s_obs, spec, bounds, proposal, T, burnin, sim, seed, init, surrogate, out_dir):
    s_obs, bounds = _check_common(s_obs, spec, bounds, T, burnin)
    if not isinstance(proposal, ProposalSpec):
        proposal = ProposalSpec(proposal)
    if proposal.sd.size != spec.D:
        raise InvalidInputError("proposal needs one SD per parameter")
    beta = _mcmc_init(init, bounds)
    P = spec.D
    config = {
        "method": method,
        "spec": spec.to_dict(),
        "s_obs": s_obs.tolist(),
        "bounds": bounds.tolist(),
        "proposal_sd": proposal.sd.tolist(),
        "T": int(T),
        "burnin": int(burnin),
        "sim": sim.to_dict(),
        "seed": int(seed),
        "init": beta.tolist(),
    }
    rng_prop = stream(seed, 0)
    rng_aux = stream(seed, 1)
    states = np.empty((T, P))
    proposals = np.empty((T, P))
    stage = np.empty(T, dtype=np.int8)
    log_r1 = np.full(T, np.nan)
    log_r2 = np.full(T, np.nan)
    s_aux = np.full((T, P), np.nan)
    sl = _surrogate_fn(surrogate, s_obs) if surrogate is not None else None
    ll_cur = sl(beta) if sl is not None else 0.0
    n1 = n2 = 0
    t0 = time.perf_counter()
    i = 0
    try:
        for i in range(T):
            new = beta + proposal.sd * rng_prop.standard_normal(P)
            u1, u2 = rng_prop.random(2)
            proposals[i] = new
            if not _in_box(new, bounds):
                stage[i] = OUT_OF_SUPPORT
            else:
                passed = True
                if sl is not None:
                    ll_new = sl(new)
                    log_r1[i] = ll_new - ll_cur
                    passed = np.log(u1) < log_r1[i]
                if not passed:
                    stage[i] = REJECTED_STAGE1
                else:
                    n1 += 1
                    x = simulate_stats(spec, new, sim.shape, sim.burnin, rng_aux, sim.sampler)
                    s_aux[i] = x
                    r2 = (new - beta) @ s_obs + (beta - new) @ x
                    if sl is not None:
                        r2 += ll_cur - ll_new
                    log_r2[i] = r2
                    if np.log(u2) < r2:
                        stage[i] = ACCEPTED
                        n2 += 1
                        beta = new
                        if sl is not None:
                            ll_cur = ll_new
                    else:
                        stage[i] = REJECTED_STAGE2
            states[i] = beta
    except Exception:
        if out_dir is not None:
            cols = {"state": states[:i], "proposal": proposals[:i], "stage": stage[:i],
                    "log_r1": log_r1[:i], "log_r2": log_r2[:i], "s_aux": s_aux[:i]}
            partial = PosteriorTrace(method, states[:i], None, {}, time.perf_counter() - t0,
                                     np.zeros(P), [], ["aborted"], config, cols)
            partial.write(out_dir, method + ".partial")
        raise
    wall = time.perf_counter() - t0
    if sl is None:
        accept = {"simulated": n1, "accepted": n2}
    else:
        accept = {"stage1": n1, "stage2": n2, "accepted": n2}
    columns = {"state": states, "proposal": proposals, "stage": stage, "log_r1": log_r1,
               "log_r2": log_r2, "s_aux": s_aux}
    if sl is None:
        del columns["log_r1"]
    return _finish_mcmc(method, states, burnin, columns, accept, wall, config, [])


# --------------------------------------------------------------------------
# algorithms


def exchange(s_obs, spec, bounds, proposal, T, burnin, sim, seed, init=None, out_dir=None):
    """Exchange algorithm under a uniform prior on ``bounds``.

    ``T`` counts all iterations; the first ``burnin`` are dropped from
    ``samples``.  Proposals outside the prior box are rejected without
    simulating.  If the sampler raises, a partial trace is written to
    ``out_dir`` (when given) before the error propagates.
    """
    return _run_chain(EXCHANGE, s_obs, spec, bounds, proposal, T, burnin, sim, seed, init, None, out_dir)


def delayed_acceptance(s_obs, spec, surrogate, bounds, proposal, T, burnin, sim, seed, init=None,
                       out_dir=None):
    """Two-stage delayed-acceptance MCMC screened by the surrogate likelihood.

    Stage 1 accepts with ``min(1, p~(z|new) / p~(z|cur))`` (symmetric
    proposal, uniform prior inside the box).  Stage 2 simulates auxiliary
    data at the proposal and applies the exchange ratio divided by the
    stage-1 surrogate ratio.  The surrogate is used in plug-in mode with
    floored variances; ``surrogate`` may also be a callable returning
    ``(mu, sigma2)`` for an array of points.
    """
    if surrogate is None:
        raise InvalidInputError("delayed acceptance needs a surrogate")
    fitted_bounds = getattr(surrogate, "bounds", None)
    if fitted_bounds is not None:
        fb = np.atleast_2d(fitted_bounds)
        pb = _check_box(bounds)
        if np.any(pb[:, 0] < fb[:, 0] - 1e-12) or np.any(pb[:, 1] > fb[:, 1] + 1e-12):
            raise InvalidInputError("surrogate bounds must cover the prior support")
    return _run_chain(DELAYED_ACCEPTANCE, s_obs, spec, bounds, proposal, T, burnin, sim, seed, init,
                      surrogate, out_dir)


def importance_sampling(s_obs, spec, surrogate, bounds, counts, T, sim, seed, workers=1, mode=PLUGIN,
                        r=100, grid=None):
    """Importance sampling with the grid surrogate posterior as proposal.

    Draws ``T`` points from the grid posterior, simulates one pseudo-dataset
    per draw on stream ``(seed, 1, i)`` and weights each draw by

        log w_i = b_i's(z) + (b_hat - b_i)'s(x_i) - log q(b_i)

    where ``q`` is the piecewise-constant grid proposal density and
    ``b_hat`` the surrogate MLE on the grid.  Results do not depend on
    ``workers``.
    """
    s_obs, bounds = _check_common(s_obs, spec, bounds, max(T, 1), 0)
    if T < 2:
        raise InvalidInputError("importance sampling needs T >= 2")
    if grid is None:
        grid = build_grid_posterior(surrogate, bounds, counts, s_obs, mode=mode, r=r, seed=seed)
    beta_hat = surrogate_mle(grid)
    t0 = time.perf_counter()
    draws, cells = sample_grid(grid, T, stream(seed, 0).integers(2**63), return_cells=True)

    def run(i):
        return simulate_stats(spec, draws[i], sim.shape, sim.burnin, stream(seed, 1, i), sim.sampler)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            sx = np.array(list(pool.map(run, range(T))))
    else:
        sx = np.array([run(i) for i in range(T)])
    log_q = grid.log_density[cells]
    log_w = draws @ s_obs + np.sum((beta_hat - draws) * sx, axis=1) - log_q
    top = np.max(log_w)
    w = np.exp(log_w - top)
    w /= w.sum()
    wall = time.perf_counter() - t0
    ess = ess_is(w)
    flags = [WEIGHT_DEGENERACY] if ess < IS_ESS_WARNING else []
    if flags:
        log.warning("importance weights are degenerate (ESS %.1f)", ess)
    config = {
        "method": IMPORTANCE_SAMPLING,
        "spec": spec.to_dict(),
        "s_obs": s_obs.tolist(),
        "bounds": bounds.tolist(),
        "grid_counts": list(grid.counts),
        "grid_mode": grid.mode,
        "T": int(T),
        "sim": sim.to_dict(),
        "seed": int(seed),
        "beta_hat": beta_hat.tolist(),
    }
    columns = {"beta": draws, "cell": cells, "s_aux": sx, "log_w": log_w, "weight": w}
    return PosteriorTrace(IMPORTANCE_SAMPLING, draws, w, {"simulated": int(T)}, wall,
                          np.full(spec.D, ess), [""] * spec.D, flags, config, columns)


def exact_posterior_mean(spec, bounds, s_obs, shape, n=2001):
    """Posterior mean and SD under the uniform prior by quadrature of the exact likelihood.

    Only for enumerable lattices and one parameter (Potts).
    """
    bounds = _check_box(bounds)
    if bounds.shape[0] != 1:
        raise InvalidInputError("quadrature reference is implemented for one parameter")
    grid = np.linspace(bounds[0, 0], bounds[0, 1], int(n))
    ll = np.array([exact_loglik(spec, b, s_obs, shape) for b in grid])
    w = np.exp(ll - ll.max())
    # trapezoid weights
    tw = np.full(grid.size, 1.0)
    tw[0] = tw[-1] = 0.5
    w = w * tw
    w /= w.sum()
    mean = float(w @ grid)
    return mean, float(np.sqrt(w @ (grid - mean) ** 2))
