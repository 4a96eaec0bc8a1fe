"""Command-line interface.

Each subcommand reads a flat JSON config (``--config``, must carry
``"version": 1``), then ``GESURROGATE_<KEY>`` environment variables, then
command-line flags, later sources overriding earlier ones.  The resolved
config is written as ``<command>.config.json`` in the output directory.

Exit codes: 0 success, 2 invalid configuration or input, 3 numerical
failure, 4 oracle check failed (benchmark).
"""

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import benchmark
from .errors import (
    DegeneratePosteriorError,
    EnumerationRefusedError,
    FitFailedError,
    IllConditionedError,
    InvalidInputError,
    UnsupportedRegimeError,
)
from .gp import KINDS, FittedSurrogate, OptimizerConfig, fit, predict_sampled
from .inference import (
    DELAYED_ACCEPTANCE,
    EXCHANGE,
    IMPORTANCE_SAMPLING,
    ProposalSpec,
    SimConfig,
    delayed_acceptance,
    exchange,
    importance_sampling,
    summarize,
    summary_rows,
)
from .lattice import (
    AUTOLOGISTIC,
    POTTS,
    LabelImage,
    ModelSpec,
    default_sampler,
    gibbs_sample,
    random_image,
    sufficient_stats,
    sw_sample,
)
from .rng import child_seed, stream
from .synlik import AVERAGED, PLUGIN, build_grid_posterior, grid_points, surrogate_mle
from .training import TrainingTable, make_design, midpoint_test_design, simulate_training_table

log = logging.getLogger("gesurrogate")

CONFIG_VERSION = 1
ENV_PREFIX = "GESURROGATE_"
DEFAULT_DIMS = "64x64"

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_ORACLE = 0, 2, 3, 4


class ConfigError(InvalidInputError):
    pass


# --------------------------------------------------------------------------
# value parsers


def parse_dims(v):
    """``"WxH"`` to a (height, width) shape."""
    if isinstance(v, (list, tuple)):
        w, h = (int(x) for x in v)
    else:
        try:
            w, h = (int(x) for x in str(v).lower().split("x"))
        except ValueError:
            raise ConfigError(f"dims must look like 64x64, got {v!r}") from None
    if w < 1 or h < 1:
        raise ConfigError(f"invalid dims {v!r}")
    return h, w


def parse_vector(v):
    """A number, a list, or a comma-separated string to a float list."""
    if v is None:
        return None
    if isinstance(v, (int, float)):
        return [float(v)]
    if isinstance(v, str):
        try:
            return [float(x) for x in v.split(",") if x.strip()]
        except ValueError:
            raise ConfigError(f"expected comma-separated numbers, got {v!r}") from None
    return [float(x) for x in v]


def parse_bounds(v):
    """``"lo,hi"`` or ``"lo,hi;lo,hi"`` or nested lists to a (P, 2) list."""
    if v is None:
        return None
    if isinstance(v, str):
        v = [parse_vector(part) for part in v.split(";")]
    out = [list(map(float, pair)) for pair in v] if np.ndim(v) == 2 else [list(map(float, v))]
    if any(len(p) != 2 or p[0] >= p[1] for p in out):
        raise ConfigError(f"bounds must be lo,hi pairs with lo < hi, got {v!r}")
    return out


def parse_points(v):
    """``"a;b;c"`` (or ``"a,b;c,d"`` in 2-D) or nested lists to a list of points."""
    if isinstance(v, str):
        return [parse_vector(part) for part in v.split(";")]
    return [parse_vector(p) for p in v]


def parse_counts(v):
    if v is None:
        return None
    if isinstance(v, str):
        return [int(x) for x in v.split(",")]
    return [int(x) for x in np.atleast_1d(v)]


def parse_list(v):
    if isinstance(v, str):
        return [x.strip() for x in v.split(",") if x.strip()]
    return list(v)


# --------------------------------------------------------------------------
# options: key -> (flag parser, default, help)

OPTIONS = {
    "out": (str, "out", "output directory"),
    "seed": (int, 0, "random seed"),
    "workers": (int, None, "worker threads (default: available cores)"),
    "model": (str, POTTS, "potts or autologistic"),
    "k": (int, 2, "number of Potts labels"),
    "dims": (str, None, "lattice size WxH (default 64x64; infer: the observed image's shape)"),
    "beta": (str, None, "natural parameter(s), comma-separated"),
    "sweeps": (int, None, "sweeps (simulate: total; train: thinning between records)"),
    "sampler": (str, None, "sw or gibbs (default: sw for Potts)"),
    "bounds": (str, None, "prior box, e.g. 0.9,1.3 or -0.2,0.1;0.7,1.2"),
    "design": (str, None, "design points per dimension, comma-separated"),
    "design_kind": (str, "grid", "grid (endpoints included) or midpoint"),
    "q": (int, 100, "replicates per design point"),
    "burnin": (int, 500, "burn-in sweeps before recording"),
    "mc_error": (str, "ess", "Monte Carlo error model: ess or iid"),
    "table": (str, None, "training table CSV"),
    "test_table": (str, None, "held-out table CSV for metrics"),
    "kind": (str, "all", "surrogate kind: S-GP, NS-GP, GE-NS-GP or all"),
    "n_starts": (int, 5, "optimizer restarts"),
    "max_evals": (int, 500, "objective evaluations per restart"),
    "surrogate": (str, None, "fitted surrogate JSON"),
    "points": (str, None, "prediction points a;b;c (2-D: a1,a2;b1,b2)"),
    "grid": (str, None, "grid cells per dimension"),
    "mode": (str, PLUGIN, "plugin or averaged prediction"),
    "r": (int, 100, "realisations for averaged/sampled prediction"),
    "s_obs": (str, None, "observed sufficient statistics"),
    "image": (str, None, "observed image file (LBL format)"),
    "method": (str, "exchange", "exchange, da or is"),
    "iters": (int, 2200, "MCMC iterations including burn-in"),
    "mcmc_burnin": (int, 200, "MCMC burn-in iterations"),
    "samples": (int, 1000, "importance samples"),
    "aux_burnin": (int, 500, "sweeps per auxiliary simulation"),
    "proposal_sd": (str, None, "random-walk proposal SD(s)"),
    "scale": (str, "desk", "benchmark scale: desk or smoke"),
    "oracle": (int, 1, "run the enumerable oracle check in benchmark mode (0/1)"),
}

COMMAND_KEYS = {
    "simulate": ["out", "seed", "model", "k", "dims", "beta", "sweeps", "sampler"],
    "design": ["out", "bounds", "design", "design_kind"],
    "train": ["out", "seed", "workers", "model", "k", "dims", "bounds", "design", "design_kind", "q", "sweeps",
              "burnin", "sampler", "mc_error"],
    "fit": ["out", "seed", "table", "test_table", "kind", "n_starts", "max_evals"],
    "predict": ["out", "seed", "surrogate", "points", "mode", "r"],
    "posterior-grid": ["out", "seed", "surrogate", "bounds", "grid", "mode", "r", "s_obs", "image", "model", "k"],
    "infer": ["out", "seed", "workers", "model", "k", "dims", "bounds", "surrogate", "s_obs", "image", "method",
              "iters", "mcmc_burnin", "samples", "aux_burnin", "grid", "mode", "r", "proposal_sd", "sampler"],
    "benchmark": ["out", "seed", "workers", "scale", "oracle"],
}

HELP = {
    "simulate": "simulate an image and print its sufficient statistics",
    "design": "write a full-factorial design",
    "train": "simulate a training table of sample moments",
    "fit": "fit surrogates to a training table",
    "predict": "predict surrogate mean and variance at given points",
    "posterior-grid": "grid approximation of the surrogate posterior",
    "infer": "posterior inference: exchange, delayed acceptance or importance sampling",
    "benchmark": "desk-scale Potts and autologistic experiments",
}


def _flag(key):
    return "--" + key.replace("_", "-")


def build_parser():
    parser = argparse.ArgumentParser(prog="gesurrogate", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd, keys in COMMAND_KEYS.items():
        p = sub.add_parser(cmd, help=HELP[cmd])
        p.add_argument("--config", help="flat JSON config file")
        for key in keys:
            typ, _, text = OPTIONS[key]
            dest = key
            flag = _flag(key)
            if cmd == "infer" and key == "mcmc_burnin":
                flag = "--burnin"
            p.add_argument(flag, dest=dest, type=typ, default=None, help=text)
    return parser


def _env_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve_config(command, args, environ=None):
    """Merge defaults, config file, environment and flags for ``command``."""
    environ = os.environ if environ is None else environ
    keys = COMMAND_KEYS[command]
    cfg = {k: OPTIONS[k][1] for k in keys}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if doc.get("version") != CONFIG_VERSION:
            raise ConfigError(f"config version must be {CONFIG_VERSION}, got {doc.get('version')!r}")
        for k, v in doc.items():
            if k in cfg:
                cfg[k] = v
            elif k not in ("version", "command"):
                log.warning("ignoring config key %r (not used by %s)", k, command)
    for k in keys:
        name = ENV_PREFIX + k.upper()
        if name in environ:
            cfg[k] = _env_value(environ[name])
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    if "workers" in cfg and cfg["workers"] is None:
        cfg["workers"] = os.cpu_count() or 1
    # infer leaves dims unset so an observed image supplies its own shape
    if "dims" in cfg and cfg["dims"] is None and command != "infer":
        cfg["dims"] = DEFAULT_DIMS
    cfg = {"version": CONFIG_VERSION, "command": command, **cfg}
    return cfg


def write_config(cfg, name=None):
    os.makedirs(cfg["out"], exist_ok=True)
    path = os.path.join(cfg["out"], f"{name or cfg['command']}.config.json")
    with open(path, "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _spec(cfg):
    model = str(cfg["model"]).lower()
    if model == POTTS:
        return ModelSpec.potts(int(cfg["k"]))
    if model == AUTOLOGISTIC:
        return ModelSpec.autologistic()
    raise ConfigError(f"unknown model {cfg['model']!r}")


def _required(cfg, key):
    if cfg.get(key) is None:
        raise ConfigError(f"missing required setting {key!r} ({_flag(key)})")
    return cfg[key]


def _observed(cfg, spec):
    if cfg.get("image"):
        img = LabelImage.load(cfg["image"]).validate(spec)
        return sufficient_stats(img, spec), img.shape
    s_obs = parse_vector(_required(cfg, "s_obs"))
    if len(s_obs) != spec.D:
        raise ConfigError(f"s_obs needs {spec.D} value(s)")
    return np.array(s_obs), None


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([x if isinstance(x, str) else repr(float(x)) for x in row])


# --------------------------------------------------------------------------
# commands


def simulate_image(spec, beta, shape, sweeps, seed, sampler=None):
    """Random start then ``sweeps`` sampler sweeps; returns the image."""
    beta = np.asarray(beta, dtype=float)
    init = random_image(spec, shape, stream(seed, 0))
    sampler = sampler or default_sampler(spec, beta)
    step = sw_sample if sampler == "sw" else gibbs_sample
    return step(spec, beta, init, sweeps, child_seed(seed, 1))


def cmd_simulate(cfg):
    spec = _spec(cfg)
    beta = parse_vector(_required(cfg, "beta"))
    if len(beta) != spec.D:
        raise ConfigError(f"beta needs {spec.D} value(s)")
    shape = parse_dims(cfg["dims"])
    sweeps = int(cfg["sweeps"] or 500)
    img = simulate_image(spec, beta, shape, sweeps, cfg["seed"], cfg["sampler"])
    stats = sufficient_stats(img, spec)
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    img.save(os.path.join(out, "image.lbl"), spec)
    rec = {"beta": beta, "dims": cfg["dims"], "seed": cfg["seed"], "sweeps": sweeps, "stats": stats.tolist(),
           "model": spec.to_dict()}
    with open(os.path.join(out, "stats.json"), "w") as fh:
        json.dump(rec, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print("s = " + " ".join(f"{v:g}" for v in stats))
    return EXIT_OK


def _design(cfg):
    bounds = parse_bounds(_required(cfg, "bounds"))
    counts = parse_counts(_required(cfg, "design"))
    if len(counts) == 1:
        counts = counts * len(bounds)
    design = make_design(bounds, counts)
    if cfg.get("design_kind", "grid") == "midpoint":
        design = benchmark.midpoint_design(bounds, counts) if design.dim > 1 else midpoint_test_design(design)
    elif cfg.get("design_kind", "grid") != "grid":
        raise ConfigError("design_kind must be grid or midpoint")
    return design


def cmd_design(cfg):
    design = _design(cfg)
    os.makedirs(cfg["out"], exist_ok=True)
    _write_rows(os.path.join(cfg["out"], "design.csv"), [f"beta_{i + 1}" for i in range(design.dim)],
                design.points)
    print(f"{design.p} design points")
    return EXIT_OK


def cmd_train(cfg):
    spec = _spec(cfg)
    design = _design(cfg)
    if design.dim != spec.D:
        raise ConfigError(f"bounds need {spec.D} dimension(s) for {spec.kind}")
    sweeps = int(cfg["sweeps"] or 10)
    table = simulate_training_table(design, spec, parse_dims(cfg["dims"]), int(cfg["q"]), sweeps,
                                    int(cfg["burnin"]), int(cfg["seed"]), workers=int(cfg["workers"]),
                                    sampler=cfg["sampler"], mc_error=cfg["mc_error"])
    os.makedirs(cfg["out"], exist_ok=True)
    path = os.path.join(cfg["out"], "table.csv")
    table.save(path)
    print(f"wrote {table.p * table.D} rows to {path}")
    return EXIT_OK


def cmd_fit(cfg):
    table = TrainingTable.load(_required(cfg, "table"))
    kinds = KINDS if cfg["kind"] == "all" else [cfg["kind"]]
    if any(k not in KINDS for k in kinds):
        raise ConfigError(f"kind must be one of {', '.join(KINDS)} or all")
    test = TrainingTable.load(cfg["test_table"]) if cfg.get("test_table") else None
    opt = OptimizerConfig(n_starts=int(cfg["n_starts"]), max_evals=int(cfg["max_evals"]))
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    for kind in kinds:
        fitted = fit(kind, table, opt, seed=int(cfg["seed"]))
        fitted.save(os.path.join(out, f"surrogate-{kind}.json"))
        if test is not None:
            m = benchmark.prediction_metrics(fitted, test)
            benchmark.write_metrics_csv(os.path.join(out, f"metrics-{kind}.csv"), {kind: m})
            benchmark.write_error_series(os.path.join(out, f"errors-{kind}.csv"), fitted, test)
            print(kind + "  " + "  ".join(f"{n}={', '.join(f'{x:.6g}' for x in v)}" for n, v in m.items()))
        else:
            print(f"{kind} fitted")
    return EXIT_OK


def cmd_predict(cfg):
    fitted = FittedSurrogate.load(_required(cfg, "surrogate"))
    pts = np.array(parse_points(_required(cfg, "points")), dtype=float)
    P, D = fitted.bounds.shape[0], fitted.D
    if pts.shape[1] != P:
        raise ConfigError(f"points need {P} coordinate(s)")
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    head = [f"beta_{i + 1}" for i in range(P)]
    if cfg["mode"] == PLUGIN:
        mu, s2 = fitted.predict(pts)
        rows = [list(x) + list(m) + list(s) for x, m, s in zip(pts, mu, s2)]
        head += [f"mu_{d + 1}" for d in range(D)] + [f"sigma2_{d + 1}" for d in range(D)]
    elif cfg["mode"] in ("sampled", AVERAGED):
        rows = []
        for j, x in enumerate(pts):
            mh, sh = predict_sampled(fitted, x, int(cfg["r"]), child_seed(cfg["seed"], j))
            rows += [list(x) + [i] + list(a) + list(b) for i, (a, b) in enumerate(zip(mh, sh))]
        head += ["realisation"] + [f"mu_{d + 1}" for d in range(D)] + [f"sigma2_{d + 1}" for d in range(D)]
    else:
        raise ConfigError("mode must be plugin or sampled")
    _write_rows(os.path.join(out, "predictions.csv"), head, rows)
    print(f"{len(rows)} predictions written")
    return EXIT_OK


def _grid_counts(cfg, P):
    counts = parse_counts(cfg.get("grid"))
    if counts is None:
        counts = [1000 if P == 1 else 200]
    return counts * P if len(counts) == 1 else counts


def cmd_posterior_grid(cfg):
    fitted = FittedSurrogate.load(_required(cfg, "surrogate"))
    P = fitted.bounds.shape[0]
    spec = _spec(cfg)
    s_obs, _ = _observed(cfg, spec)
    bounds = parse_bounds(cfg["bounds"]) if cfg.get("bounds") else fitted.bounds.tolist()
    grid = build_grid_posterior(fitted, bounds, _grid_counts(cfg, P), s_obs, mode=cfg["mode"], r=int(cfg["r"]),
                                seed=int(cfg["seed"]))
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    grid.save(os.path.join(out, "grid.csv"))
    lik = build_grid_posterior(fitted, bounds, _grid_counts(cfg, P), s_obs, mode=cfg["mode"], r=int(cfg["r"]),
                               seed=int(cfg["seed"]), with_prior=False)
    summ = {"mean": grid.mean().tolist(), "sd": grid.sd().tolist(), "mle": surrogate_mle(lik).tolist(),
            "n_floored": grid.n_floored, "meta": grid.meta, "s_obs": s_obs.tolist()}
    with open(os.path.join(out, "grid.summary.json"), "w") as fh:
        json.dump(summ, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print("posterior mean " + " ".join(f"{v:.6g}" for v in summ["mean"]) + ", sd "
          + " ".join(f"{v:.6g}" for v in summ["sd"]))
    return EXIT_OK


METHODS = {"exchange": EXCHANGE, "da": DELAYED_ACCEPTANCE, DELAYED_ACCEPTANCE: DELAYED_ACCEPTANCE,
           "is": IMPORTANCE_SAMPLING, IMPORTANCE_SAMPLING: IMPORTANCE_SAMPLING}


def cmd_infer(cfg):
    spec = _spec(cfg)
    method = METHODS.get(cfg["method"])
    if method is None:
        raise ConfigError("method must be exchange, da or is")
    s_obs, img_shape = _observed(cfg, spec)
    shape = parse_dims(cfg["dims"] or DEFAULT_DIMS) if img_shape is None or cfg.get("dims") else img_shape
    if img_shape is not None and tuple(shape) != tuple(img_shape):
        raise ConfigError(f"dims {cfg['dims']} do not match the observed image ({img_shape[1]}x{img_shape[0]})")
    fitted = FittedSurrogate.load(cfg["surrogate"]) if cfg.get("surrogate") else None
    if cfg.get("bounds"):
        bounds = parse_bounds(cfg["bounds"])
    elif fitted is not None:
        bounds = fitted.bounds.tolist()
    else:
        raise ConfigError("missing required setting 'bounds' (--bounds)")
    sim = SimConfig(shape, burnin=int(cfg["aux_burnin"]), sampler=cfg.get("sampler"))
    grid = None
    if fitted is not None:
        grid = build_grid_posterior(fitted, bounds, _grid_counts(cfg, len(bounds)), s_obs, mode=cfg["mode"],
                                    r=int(cfg["r"]), seed=int(cfg["seed"]))
    if cfg.get("proposal_sd"):
        proposal = ProposalSpec(parse_vector(cfg["proposal_sd"]))
    elif grid is not None:
        proposal = ProposalSpec.from_posterior_sd(np.maximum(grid.sd(), 1e-12))
    else:
        proposal = ProposalSpec.default(bounds)
    seed, out = int(cfg["seed"]), cfg["out"]
    if method == EXCHANGE:
        tr = exchange(s_obs, spec, bounds, proposal, int(cfg["iters"]), int(cfg["mcmc_burnin"]), sim, seed,
                      out_dir=out)
    elif fitted is None:
        raise ConfigError(f"{method} needs --surrogate")
    elif method == DELAYED_ACCEPTANCE:
        tr = delayed_acceptance(s_obs, spec, fitted, bounds, proposal, int(cfg["iters"]), int(cfg["mcmc_burnin"]),
                                sim, seed, out_dir=out)
    else:
        tr = importance_sampling(s_obs, spec, fitted, bounds, None, int(cfg["samples"]), sim, seed,
                                 workers=int(cfg["workers"]), grid=grid)
    tr.write(out)
    summ = summarize(tr)
    for label, values in summary_rows(summ):
        print(f"{label:<16}" + "  ".join(f"{v:.6g}" for v in values))
    if tr.flags:
        print("flags: " + ", ".join(tr.flags))
    return EXIT_OK


def _benchmark_configs(scale):
    potts, auto = benchmark.potts_defaults(), benchmark.autologistic_defaults()
    if scale == "smoke":
        small = {"dims": (12, 12), "q": 20, "sweeps": 2, "burnin": 20, "data_sweeps": 20, "n_starts": 1,
                 "max_evals": 60, "grid": 200, "iters": 120, "mcmc_burnin": 20, "samples": 100, "aux_burnin": 10}
        potts.update(small, design=11)
        auto.update(small, design=[4, 5], grid=40)
    elif scale != "desk":
        raise ConfigError("scale must be desk or smoke")
    return potts, auto


def cmd_benchmark(cfg):
    if cfg.get("seed") is None:
        raise ConfigError("benchmark needs an explicit --seed")
    potts, auto = _benchmark_configs(cfg["scale"])
    report, passed = benchmark.run_benchmark(potts, auto, int(cfg["seed"]), cfg["out"], workers=int(cfg["workers"]),
                                             oracle=bool(int(cfg["oracle"])))
    for name in ("potts", "autologistic"):
        print(f"[{name}]")
        for kind, m in report[name]["metrics"].items():
            print(f"  {kind:<9}" + "  ".join(f"{n}={', '.join(f'{x:.4g}' for x in v)}" for n, v in m.items()))
        for method, s in report[name]["inference"].items():
            print(f"  {method:<20} mean " + " ".join(f"{v:.5f}" for v in s["posterior_mean"])
                  + "  ess " + " ".join(f"{v:.1f}" for v in s["ess"]))
    if "oracle" in report:
        print("oracle check: " + ("pass" if passed else "FAIL"))
    return EXIT_OK if passed else EXIT_ORACLE


COMMANDS = {
    "simulate": cmd_simulate,
    "design": cmd_design,
    "train": cmd_train,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "posterior-grid": cmd_posterior_grid,
    "infer": cmd_infer,
    "benchmark": cmd_benchmark,
}


def main(argv=None, environ=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "benchmark" and args.seed is None:
            raise ConfigError("benchmark needs an explicit --seed")
        cfg = resolve_config(args.command, args, environ)
        write_config(cfg)
        return COMMANDS[args.command](cfg)
    except (InvalidInputError, UnsupportedRegimeError, EnumerationRefusedError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IllConditionedError, FitFailedError, DegeneratePosteriorError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
