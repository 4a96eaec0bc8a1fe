"""Desk-scale versions of the Potts and autologistic experiments.

Each pipeline simulates a training table on a full-factorial design and a
test table at the design cell midpoints, fits the three surrogate kinds,
scores them on the test table, simulates observed data at a known
parameter and runs the requested posterior samplers.  A small enumerable
model is used as an oracle check on the samplers.

Every primary output is a deterministic function of the configuration and
seed; wall-clock times go to separate ``*.timing.json`` files.
"""

import csv
import json
import logging
import os
import time

import numpy as np

from .gp import KINDS, OptimizerConfig, fit
from .inference import (
    DELAYED_ACCEPTANCE,
    EXCHANGE,
    IMPORTANCE_SAMPLING,
    ProposalSpec,
    SimConfig,
    delayed_acceptance,
    exact_posterior_mean,
    exchange,
    importance_sampling,
    summarize,
)
from .lattice import ModelSpec, chain_stats, exact_moments
from .rng import child_seed, stream
from .synlik import build_grid_posterior
from .training import Design, TrainingTable, make_design, simulate_training_table

log = logging.getLogger(__name__)

METRIC_NAMES = ("MAE (mean)", "RMSPE (mean)", "MAE (variance)", "RMSPE (variance)")

METHOD_ALIASES = {
    "exchange": EXCHANGE,
    "da": DELAYED_ACCEPTANCE,
    DELAYED_ACCEPTANCE: DELAYED_ACCEPTANCE,
    "is": IMPORTANCE_SAMPLING,
    IMPORTANCE_SAMPLING: IMPORTANCE_SAMPLING,
}


def midpoint_design(bounds, counts):
    """Midpoints between consecutive grid values along every axis, full-factorial."""
    grid = make_design(bounds, counts)
    axes = [np.unique(grid.points[:, i]) for i in range(grid.dim)]
    mids = [(a[1:] + a[:-1]) / 2 for a in axes]
    mesh = np.meshgrid(*mids, indexing="ij")
    return Design(np.column_stack([m.ravel() for m in mesh]), grid.bounds)


def prediction_metrics(fitted, test):
    """Absolute and root-mean-square prediction errors against a test table.

    Returns a dict keyed by ``METRIC_NAMES`` with one value per statistic.
    """
    mu, s2 = fitted.predict(test.points)
    em = mu - test.m
    ev = s2 - test.v
    return {
        "MAE (mean)": np.mean(np.abs(em), axis=0),
        "RMSPE (mean)": np.sqrt(np.mean(em**2, axis=0)),
        "MAE (variance)": np.mean(np.abs(ev), axis=0),
        "RMSPE (variance)": np.sqrt(np.mean(ev**2, axis=0)),
    }


def write_metrics_csv(path, columns):
    """``columns`` maps a column label to a metrics dict from ``prediction_metrics``."""
    labels = list(columns)
    D = len(next(iter(columns.values()))["MAE (mean)"]) if labels else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = ["metric"]
        for lab in labels:
            head += [lab] if D == 1 else [f"{lab} s{d + 1}" for d in range(D)]
        w.writerow(head)
        for name in METRIC_NAMES:
            row = [name]
            for lab in labels:
                row += [repr(float(v)) for v in columns[lab][name]]
            w.writerow(row)


def write_error_series(path, fitted, test):
    """Per-test-point absolute errors of the predicted mean and variance."""
    mu, s2 = fitted.predict(test.points)
    P, D = test.points.shape[1], test.D
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = [f"beta_{i + 1}" for i in range(P)]
        for d in range(D):
            head += [f"abs_err_mean_{d + 1}", f"abs_err_var_{d + 1}"]
        w.writerow(head)
        for j in range(test.p):
            row = [repr(float(b)) for b in test.points[j]]
            for d in range(D):
                row += [repr(float(abs(mu[j, d] - test.m[j, d]))), repr(float(abs(s2[j, d] - test.v[j, d])))]
            w.writerow(row)


def observed_stats(spec, beta, shape, sweeps, seed, sampler=None):
    """Statistics of one image simulated from a random start after ``sweeps`` sweeps."""
    return chain_stats(spec, beta, shape, sweeps - 1, 1, 1, stream(seed), sampler=sampler)[0]


def _dump(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _floats(a):
    return [float(v) for v in np.atleast_1d(a)]


def run_pipeline(name, spec, cfg, seed, out_dir, workers=1):
    """One model's training, fitting, scoring and inference.

    ``cfg`` keys: dims (height, width), bounds, design, beta_true, q,
    sweeps, burnin, data_sweeps, n_starts, max_evals, grid, methods, iters,
    mcmc_burnin, samples, aux_burnin.  Returns ``(report, timing)``.
    """
    timing = {}
    shape = tuple(cfg["dims"])
    bounds = np.asarray(cfg["bounds"], dtype=float)
    prefix = os.path.join(out_dir, name)

    t0 = time.perf_counter()
    design = make_design(bounds, cfg["design"])
    train = simulate_training_table(design, spec, shape, cfg["q"], cfg["sweeps"], cfg["burnin"],
                                    child_seed(seed, 1), workers=workers)
    test = simulate_training_table(midpoint_design(bounds, cfg["design"]), spec, shape, cfg["q"],
                                   cfg["sweeps"], cfg["burnin"], child_seed(seed, 2), workers=workers)
    train.save(prefix + ".train.csv")
    test.save(prefix + ".test.csv")
    timing["simulate_tables"] = time.perf_counter() - t0

    opt = OptimizerConfig(n_starts=cfg["n_starts"], max_evals=cfg["max_evals"])
    fits, metrics = {}, {}
    for kind in KINDS:
        t0 = time.perf_counter()
        fits[kind] = fit(kind, train, opt, seed=child_seed(seed, 3))
        timing[f"fit {kind}"] = time.perf_counter() - t0
        fits[kind].save(f"{prefix}.surrogate-{kind}.json")
        metrics[kind] = prediction_metrics(fits[kind], test)
        write_error_series(f"{prefix}.errors-{kind}.csv", fits[kind], test)
    write_metrics_csv(prefix + ".metrics.csv", metrics)

    s_obs = observed_stats(spec, cfg["beta_true"], shape, cfg["data_sweeps"], child_seed(seed, 4))
    surrogate = fits[KINDS[-1]]
    grid_counts = cfg.get("grid") or (1000 if spec.D == 1 else 200)
    t0 = time.perf_counter()
    grid = build_grid_posterior(surrogate, bounds, grid_counts, s_obs)
    timing["grid_posterior"] = time.perf_counter() - t0
    grid.save(prefix + ".grid.csv")
    proposal = ProposalSpec.from_posterior_sd(np.maximum(grid.sd(), 1e-12))
    sim = SimConfig(shape, burnin=cfg["aux_burnin"])

    inference_out = {}
    for j, method in enumerate(METHOD_ALIASES[m] for m in cfg["methods"]):
        s = child_seed(seed, 5, j)
        if method == EXCHANGE:
            tr = exchange(s_obs, spec, bounds, proposal, cfg["iters"], cfg["mcmc_burnin"], sim, s)
        elif method == DELAYED_ACCEPTANCE:
            tr = delayed_acceptance(s_obs, spec, surrogate, bounds, proposal, cfg["iters"], cfg["mcmc_burnin"],
                                    sim, s)
        else:
            tr = importance_sampling(s_obs, spec, surrogate, bounds, None, cfg["samples"], sim, s,
                                     workers=workers, grid=grid)
        tr.write(out_dir, f"{name}.{method}")
        summ = summarize(tr, timing=False)
        summ.pop("config")
        inference_out[method] = summ
        timing[method] = summarize(tr)
        timing[method] = {"wall_seconds": tr.wall_seconds, "ess_per_hour": timing[method]["ess_per_hour"]}

    report = {
        "model": spec.to_dict(),
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in cfg.items()},
        "seed": int(seed),
        "train_sha256": train.digest(),
        "test_sha256": test.digest(),
        "metrics": {k: {n: _floats(v) for n, v in m.items()} for k, m in metrics.items()},
        "s_obs": _floats(s_obs),
        "grid_posterior": {"mean": _floats(grid.mean()), "sd": _floats(grid.sd()),
                           "n_floored": int(grid.n_floored)},
        "proposal_sd": _floats(proposal.sd),
        "inference": inference_out,
    }
    return report, timing


def oracle_check(seed, T=20_000, T_is=5000):
    """Exchange and importance sampling against quadrature on a 3x3, k = 2 Potts model.

    Returns ``(passed, details)``; agreement means within 4 Monte Carlo
    standard errors of the exact posterior mean.
    """
    spec = ModelSpec.potts(2)
    shape, bounds = (3, 3), [[0.0, 1.5]]
    s_obs = observed_stats(spec, [0.6], shape, 50, child_seed(seed, 10))
    ref_mean, ref_sd = exact_posterior_mean(spec, bounds, s_obs, shape)
    design = make_design(bounds, 21)
    mv = [exact_moments(spec, b, shape) for b in design.points]
    table = TrainingTable.from_moments(design.points, design.bounds, [m for m, _ in mv], [v for _, v in mv],
                                       q=100, tau2_mu=1e-8, tau2_sigma=1e-8)
    surrogate = fit(KINDS[-1], table, OptimizerConfig(n_starts=2, max_evals=200), seed=child_seed(seed, 11))
    sim = SimConfig(shape, burnin=10)
    proposal = ProposalSpec.default(bounds)
    runs = {
        EXCHANGE: exchange(s_obs, spec, bounds, proposal, T, T // 20, sim, child_seed(seed, 12)),
        DELAYED_ACCEPTANCE: delayed_acceptance(s_obs, spec, surrogate, bounds, proposal, T, T // 20, sim,
                                               child_seed(seed, 13)),
        IMPORTANCE_SAMPLING: importance_sampling(s_obs, spec, surrogate, bounds, 1000, T_is, sim,
                                                 child_seed(seed, 14)),
    }
    details = {"s_obs": _floats(s_obs), "reference_mean": ref_mean, "reference_sd": ref_sd, "methods": {}}
    passed = True
    for method, tr in runs.items():
        s = summarize(tr, timing=False)
        z = abs(s["posterior_mean"][0] - ref_mean) / s["mcse"][0]
        ok = bool(z < 4)
        passed &= ok
        details["methods"][method] = {"posterior_mean": s["posterior_mean"][0], "mcse": s["mcse"][0],
                                      "z": float(z), "pass": ok}
    details["pass"] = passed
    return passed, details


def potts_defaults():
    return {
        "dims": (64, 64),
        "k": 5,
        "bounds": [[0.9, 1.3]],
        "design": 51,
        "beta_true": [1.1701],
        "q": 100,
        "sweeps": 50,
        "burnin": 500,
        "data_sweeps": 500,
        "n_starts": 5,
        "max_evals": 500,
        "grid": None,
        "methods": ["exchange", "da", "is"],
        "iters": 2200,
        "mcmc_burnin": 200,
        "samples": 2200,
        "aux_burnin": 500,
    }


def autologistic_defaults():
    cfg = potts_defaults()
    cfg.update({
        "bounds": [[-0.2, 0.1], [0.7, 1.2]],
        "design": [7, 11],
        "beta_true": [-0.05, 0.95],
        "q": 50,
        "sweeps": 10,
        "burnin": 200,
        "data_sweeps": 200,
        "methods": ["da", "is"],
        "aux_burnin": 200,
    })
    cfg.pop("k")
    return cfg


def run_benchmark(potts_cfg, auto_cfg, seed, out_dir, workers=1, oracle=True):
    """Run both pipelines and the oracle check; write the consolidated report.

    Returns ``(report, passed)`` where ``passed`` is the oracle verdict.
    """
    os.makedirs(out_dir, exist_ok=True)
    report, timing = {"seed": int(seed)}, {}
    spec = ModelSpec.potts(potts_cfg["k"])
    report["potts"], timing["potts"] = run_pipeline("potts", spec, potts_cfg, child_seed(seed, 100), out_dir,
                                                    workers)
    report["autologistic"], timing["autologistic"] = run_pipeline(
        "autologistic", ModelSpec.autologistic(), auto_cfg, child_seed(seed, 200), out_dir, workers)
    passed = True
    if oracle:
        t0 = time.perf_counter()
        passed, report["oracle"] = oracle_check(child_seed(seed, 300))
        timing["oracle"] = time.perf_counter() - t0
    _dump(os.path.join(out_dir, "benchmark.report.json"), report)
    _dump(os.path.join(out_dir, "benchmark.timing.json"), timing)
    return report, passed
