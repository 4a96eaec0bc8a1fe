import csv
import hashlib
import json

import numpy as np
import pytest

from gesurrogate import benchmark, cli
from gesurrogate.errors import IllConditionedError
from gesurrogate.inference import exact_posterior_mean
from gesurrogate.lattice import ModelSpec, sufficient_stats


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    """Train, test and fit a small 3x3 k=2 Potts problem through the CLI."""
    root = tmp_path_factory.mktemp("cli")
    common = ["--model", "potts", "--k", "2", "--dims", "3x3", "--bounds", "0.3,1.3", "--q", "200", "--sweeps", "3",
              "--burnin", "20"]
    assert cli.main(["train", *common, "--design", "21", "--seed", "1", "--out", str(root / "train")]) == 0
    assert cli.main(["train", *common, "--design", "21", "--design-kind", "midpoint", "--seed", "2",
                     "--out", str(root / "test")]) == 0
    assert cli.main(["fit", "--table", str(root / "train" / "table.csv"), "--test-table",
                     str(root / "test" / "table.csv"), "--n-starts", "2", "--max-evals", "200",
                     "--out", str(root / "fit")]) == 0
    return root


class TestParsing:
    def test_dims(self):
        assert cli.parse_dims("64x32") == (32, 64)
        with pytest.raises(cli.ConfigError):
            cli.parse_dims("64by64")

    def test_bounds(self):
        assert cli.parse_bounds("0.9,1.3") == [[0.9, 1.3]]
        assert cli.parse_bounds("-0.2,0.1;0.7,1.2") == [[-0.2, 0.1], [0.7, 1.2]]
        assert cli.parse_bounds([[0, 1]]) == [[0.0, 1.0]]
        with pytest.raises(cli.ConfigError):
            cli.parse_bounds("1,0")

    def test_points(self):
        assert cli.parse_points("0.5;0.8") == [[0.5], [0.8]]
        assert cli.parse_points("0,1;2,3") == [[0.0, 1.0], [2.0, 3.0]]


class TestConfig:
    def test_precedence(self, tmp_path):
        conf = tmp_path / "c.json"
        conf.write_text(json.dumps({"version": 1, "q": 7, "burnin": 11, "sweeps": 2}))
        args = cli.build_parser().parse_args(["train", "--config", str(conf), "--burnin", "13"])
        cfg = cli.resolve_config("train", args, environ={"GESURROGATE_Q": "9", "GESURROGATE_SWEEPS": "4",
                                                         "GESURROGATE_BURNIN": "12"})
        # file < environment < flags
        assert (cfg["q"], cfg["sweeps"], cfg["burnin"]) == (9, 4, 13)
        assert cfg["version"] == 1 and cfg["command"] == "train"
        assert cfg["workers"] >= 1

    def test_bad_version(self, tmp_path, capsys):
        conf = tmp_path / "c.json"
        conf.write_text(json.dumps({"version": 2}))
        assert cli.main(["design", "--config", str(conf), "--bounds", "0,1", "--design", "3",
                         "--out", str(tmp_path)]) == 2
        assert "version" in capsys.readouterr().err

    def test_resolved_config_written(self, tmp_path):
        out = tmp_path / "d"
        assert cli.main(["design", "--bounds=-0.2,0.1;0.7,1.2", "--design", "7,11", "--out", str(out)]) == 0
        cfg = json.loads((out / "design.config.json").read_text())
        assert cfg["bounds"] == "-0.2,0.1;0.7,1.2" and cfg["design"] == "7,11"
        assert len(read_csv(out / "design.csv")) == 1 + 77

    def test_config_reproduces(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert cli.main(["simulate", "--beta", "0.4", "--dims", "8x8", "--seed", "3", "--out", str(a)]) == 0
        cfg = json.loads((a / "simulate.config.json").read_text())
        cfg["out"] = str(b)
        (tmp_path / "again.json").write_text(json.dumps(cfg))
        assert cli.main(["simulate", "--config", str(tmp_path / "again.json")]) == 0
        assert sha(a / "image.lbl") == sha(b / "image.lbl")


class TestSimulate:
    def test_potts_image(self, tmp_path, capsys):
        out = tmp_path / "s"
        rc = cli.main(["simulate", "--model", "potts", "--k", "5", "--dims", "64x64", "--beta", "1.1701",
                       "--seed", "7", "--out", str(out)])
        assert rc == 0
        rec = json.loads((out / "stats.json").read_text())
        assert capsys.readouterr().out.strip() == f"s = {rec['stats'][0]:g}"
        from gesurrogate.lattice import LabelImage
        img = LabelImage.load(out / "image.lbl")
        assert img.shape == (64, 64)
        assert sufficient_stats(img, ModelSpec.potts(5))[0] == rec["stats"][0]
        again = tmp_path / "t"
        cli.main(["simulate", "--model", "potts", "--k", "5", "--dims", "64x64", "--beta", "1.1701",
                  "--seed", "7", "--out", str(again)])
        assert sha(out / "image.lbl") == sha(again / "image.lbl")

    def test_independence_mean(self):
        spec = ModelSpec.potts(2)
        s = [sufficient_stats(cli.simulate_image(spec, [0.0], (3, 3), 1, seed), spec)[0] for seed in range(10_000)]
        # each of the 12 pairs matches with probability 1/2
        assert abs(np.mean(s) - 6.0) < 4 * np.sqrt(3.0 / 10_000)

    def test_autologistic(self, tmp_path):
        out = tmp_path / "a"
        assert cli.main(["simulate", "--model", "autologistic", "--dims", "10x6", "--beta=-0.05,0.95",
                         "--seed", "1", "--out", str(out)]) == 0
        assert len(json.loads((out / "stats.json").read_text())["stats"]) == 2

    def test_bad_input(self, tmp_path):
        assert cli.main(["simulate", "--beta", "1,2", "--out", str(tmp_path)]) == 2
        assert cli.main(["simulate", "--model", "ising", "--beta", "1", "--out", str(tmp_path)]) == 2
        assert cli.main(["simulate", "--dims", "3x3", "--out", str(tmp_path)]) == 2


class TestTrainFit:
    def test_row_count(self, tmp_path):
        out = tmp_path / "t"
        assert cli.main(["train", "--model", "potts", "--k", "2", "--dims", "4x4", "--bounds", "0.9,1.3",
                         "--design", "51", "--q", "2", "--sweeps", "1", "--burnin", "1", "--out", str(out)]) == 0
        rows = read_csv(out / "table.csv")
        assert len(rows) - 1 == 51
        head = rows[0]
        for r in rows[1:]:
            for col in ("v", "tau2_mu", "tau2_sigma"):
                assert np.isfinite(float(r[head.index(col)]))

    def test_deterministic_and_worker_independent(self, tmp_path):
        args = ["train", "--model", "autologistic", "--dims", "5x5", "--bounds=-0.2,0.1;0.7,1.2",
                "--design", "3,4", "--q", "10", "--sweeps", "1", "--burnin", "5", "--seed", "4"]
        for name, w in (("a", "1"), ("b", "1"), ("c", "3")):
            assert cli.main([*args, "--workers", w, "--out", str(tmp_path / name)]) == 0
        assert len(read_csv(tmp_path / "a" / "table.csv")) - 1 == 12 * 2
        assert sha(tmp_path / "a" / "table.csv") == sha(tmp_path / "b" / "table.csv")
        assert sha(tmp_path / "a" / "table.csv") == sha(tmp_path / "c" / "table.csv")

    def test_metrics_files(self, small_run):
        for kind in ("S-GP", "NS-GP", "GE-NS-GP"):
            rows = read_csv(small_run / "fit" / f"metrics-{kind}.csv")
            assert rows[0] == ["metric", kind]
            assert [r[0] for r in rows[1:]] == ["MAE (mean)", "RMSPE (mean)", "MAE (variance)", "RMSPE (variance)"]
            assert all(float(r[1]) >= 0 for r in rows[1:])
            assert (small_run / "fit" / f"surrogate-{kind}.json").exists()
            assert len(read_csv(small_run / "fit" / f"errors-{kind}.csv")) == 1 + 20

    def test_numerical_failure_exit(self, small_run, tmp_path, monkeypatch):
        def broken(*args, **kwargs):
            raise IllConditionedError("covariance not positive definite")

        monkeypatch.setattr(cli, "fit", broken)
        assert cli.main(["fit", "--table", str(small_run / "train" / "table.csv"), "--out", str(tmp_path)]) == 3

    def test_missing_table(self, tmp_path):
        assert cli.main(["fit", "--table", str(tmp_path / "none.csv"), "--out", str(tmp_path)]) == 2


class TestPredictGrid:
    def test_predict(self, small_run, tmp_path):
        sur = str(small_run / "fit" / "surrogate-GE-NS-GP.json")
        assert cli.main(["predict", "--surrogate", sur, "--points", "0.5;0.8", "--out", str(tmp_path / "p")]) == 0
        rows = read_csv(tmp_path / "p" / "predictions.csv")
        assert rows[0] == ["beta_1", "mu_1", "sigma2_1"] and len(rows) == 3
        assert cli.main(["predict", "--surrogate", sur, "--points", "0.5", "--mode", "sampled", "--r", "5",
                         "--out", str(tmp_path / "q")]) == 0
        assert len(read_csv(tmp_path / "q" / "predictions.csv")) == 6

    def test_posterior_grid(self, small_run, tmp_path):
        sur = str(small_run / "fit" / "surrogate-GE-NS-GP.json")
        assert cli.main(["posterior-grid", "--surrogate", sur, "--s-obs", "8", "--grid", "500",
                         "--out", str(tmp_path)]) == 0
        rows = read_csv(tmp_path / "grid.csv")
        assert len(rows) == 501
        assert sum(float(r[2]) for r in rows[1:]) == pytest.approx(1.0, abs=1e-12)
        summ = json.loads((tmp_path / "grid.summary.json").read_text())
        assert 0.3 < summ["mean"][0] < 1.3 and summ["meta"]["mode"] == "plugin"


class TestInfer:
    def test_exchange_oracle(self, tmp_path, capsys):
        rc = cli.main(["infer", "--method", "exchange", "--iters", "2200", "--burnin", "200", "--model", "potts",
                       "--k", "2", "--dims", "3x3", "--bounds", "0.3,1.3", "--s-obs", "8", "--aux-burnin", "10",
                       "--seed", "5", "--out", str(tmp_path)])
        assert rc == 0
        labels = [line[:16].strip() for line in capsys.readouterr().out.splitlines()]
        assert labels[:4] == ["Posterior mean", "Posterior SD", "Time (hours)", "ESS/hour"]
        summ = json.loads((tmp_path / "exchange.summary.json").read_text())
        ref, _ = exact_posterior_mean(ModelSpec.potts(2), [[0.3, 1.3]], [8.0], (3, 3))
        assert abs(summ["posterior_mean"][0] - ref) < 4 * summ["mcse"][0]
        assert len((tmp_path / "exchange.trace.jsonl").read_text().splitlines()) == 2200
        assert (tmp_path / "exchange.timing.json").exists()

    def test_importance_weights(self, small_run, tmp_path):
        sur = str(small_run / "fit" / "surrogate-GE-NS-GP.json")
        rc = cli.main(["infer", "--method", "is", "--samples", "1000", "--surrogate", sur, "--dims", "3x3",
                       "--s-obs", "8", "--aux-burnin", "10", "--workers", "2", "--out", str(tmp_path)])
        assert rc == 0
        rows = read_csv(tmp_path / "importance-sampling.samples.csv")
        assert rows[0] == ["beta_1", "weight"]
        assert sum(float(r[1]) for r in rows[1:]) == pytest.approx(1.0, abs=1e-12)

    def test_image_input(self, small_run, tmp_path):
        img_dir = tmp_path / "img"
        cli.main(["simulate", "--beta", "0.7", "--dims", "3x3", "--seed", "2", "--out", str(img_dir)])
        sur = str(small_run / "fit" / "surrogate-GE-NS-GP.json")
        rc = cli.main(["infer", "--method", "da", "--iters", "300", "--burnin", "50", "--surrogate", sur,
                       "--image", str(img_dir / "image.lbl"), "--dims", "3x3", "--aux-burnin", "10",
                       "--out", str(tmp_path / "da")])
        assert rc == 0
        summ = json.loads((tmp_path / "da" / "delayed-acceptance.summary.json").read_text())
        assert summ["config"]["s_obs"] == json.loads((img_dir / "stats.json").read_text())["stats"]

    def test_image_shape_sets_auxiliary_lattice(self, small_run, tmp_path):
        img_dir = tmp_path / "img"
        cli.main(["simulate", "--beta", "0.7", "--dims", "3x3", "--seed", "2", "--out", str(img_dir)])
        sur = str(small_run / "fit" / "surrogate-GE-NS-GP.json")
        base = ["infer", "--method", "exchange", "--iters", "20", "--burnin", "5", "--surrogate", sur,
                "--image", str(img_dir / "image.lbl"), "--aux-burnin", "10", "--seed", "4"]
        assert cli.main(base + ["--out", str(tmp_path / "a")]) == 0
        assert cli.main(base + ["--dims", "3x3", "--out", str(tmp_path / "b")]) == 0
        name = "exchange.samples.csv"
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        assert cli.main(base + ["--dims", "4x4", "--out", str(tmp_path / "c")]) == 2

    def test_da_needs_surrogate(self, tmp_path):
        assert cli.main(["infer", "--method", "da", "--bounds", "0,1", "--s-obs", "8", "--dims", "3x3",
                         "--out", str(tmp_path)]) == 2


class TestBenchmark:
    def test_seed_required(self, tmp_path):
        assert cli.main(["benchmark", "--out", str(tmp_path)]) == 2

    def test_smoke_report(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert cli.main(["benchmark", "--seed", "3", "--scale", "smoke", "--oracle", "0", "--workers", "1",
                         "--out", str(a)]) == 0
        report = json.loads((a / "benchmark.report.json").read_text())
        for name in ("potts", "autologistic"):
            assert set(report[name]["metrics"]) == {"S-GP", "NS-GP", "GE-NS-GP"}
            assert len(report[name]["inference"]) >= 2
        assert report["autologistic"]["config"]["bounds"] == [[-0.2, 0.1], [0.7, 1.2]]
        assert report["autologistic"]["config"]["design"] == [4, 5]
        assert report["potts"]["config"]["k"] == 5
        # rerun from the archived resolved config, different worker count
        cfg = json.loads((a / "benchmark.config.json").read_text())
        cfg.update(out=str(b), workers=2)
        (tmp_path / "bench.json").write_text(json.dumps(cfg))
        assert cli.main(["benchmark", "--config", str(tmp_path / "bench.json"), "--seed", "3"]) == 0
        for path in sorted(a.iterdir()):
            if path.name.endswith((".timing.json", ".config.json")):
                continue
            assert sha(path) == sha(b / path.name), path.name

    def test_default_configs(self):
        auto = benchmark.autologistic_defaults()
        assert auto["bounds"] == [[-0.2, 0.1], [0.7, 1.2]] and auto["design"] == [7, 11]
        potts = benchmark.potts_defaults()
        assert potts["k"] == 5 and potts["bounds"] == [[0.9, 1.3]] and potts["design"] == 51
        assert potts["beta_true"] == [1.1701]

    def test_oracle_failure_exit(self, tmp_path, monkeypatch):
        def fake(potts, auto, seed, out_dir, workers=1, oracle=True):
            return {"potts": {"metrics": {}, "inference": {}}, "autologistic": {"metrics": {}, "inference": {}},
                    "oracle": {"pass": False}}, False

        monkeypatch.setattr(benchmark, "run_benchmark", fake)
        assert cli.main(["benchmark", "--seed", "1", "--out", str(tmp_path)]) == 4

    def test_midpoint_design(self):
        d = benchmark.midpoint_design([[0.0, 1.0], [0.0, 2.0]], [3, 5])
        assert d.p == 2 * 4
        np.testing.assert_allclose(np.unique(d.points[:, 0]), [0.25, 0.75])
