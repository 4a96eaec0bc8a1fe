import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gesurrogate.errors import InvalidInputError, UnsupportedRegimeError
from gesurrogate.lattice import ModelSpec, exact_moments
from gesurrogate.training import (
    Design,
    TrainingTable,
    make_design,
    midpoint_test_design,
    simulate_training_table,
)


class TestDesign:
    def test_potts_design(self):
        d = make_design([[0.9, 1.3]], 51)
        x = d.points[:, 0]
        assert d.p == 51
        assert x[0] == 0.9 and x[-1] == 1.3
        np.testing.assert_allclose(np.diff(x), 0.008, atol=1e-12)

    def test_autologistic_design(self):
        d = make_design([[-0.2, 0.1], [0.7, 1.2]], (7, 11))
        assert d.points.shape == (77, 2)
        # first dimension varies slowest
        assert np.all(d.points[:11, 0] == -0.2)

    def test_endpoints_only(self):
        assert make_design([[0.0, 1.0]], 2).points[:, 0].tolist() == [0.0, 1.0]

    def test_invalid_bounds(self):
        with pytest.raises(InvalidInputError):
            make_design([[1.0, 1.0]], 5)
        with pytest.raises(InvalidInputError):
            make_design([[0.0, 1.0]], 1)

    def test_midpoints(self):
        mid = midpoint_test_design(make_design([[0.9, 1.3]], 51)).points[:, 0]
        assert mid.size == 50 and mid[0] == pytest.approx(0.904)
        assert midpoint_test_design(make_design([[0.0, 1.0]], 2)).points[:, 0].tolist() == [0.5]
        assert midpoint_test_design(make_design([[0.0, 1.0]], 3)).points[:, 0].tolist() == [0.25, 0.75]

    def test_midpoints_reject_2d(self):
        with pytest.raises(UnsupportedRegimeError):
            midpoint_test_design(make_design([[0, 1], [0, 1]], (2, 2)))


class TestTable:
    @given(st.integers(2, 50), st.integers(1, 6))
    def test_iid_identities(self, q, p):
        rng = np.random.default_rng(q * 100 + p)
        samples = rng.normal(size=(p, q, 1)) * 3 + 10
        t = TrainingTable.from_samples(np.arange(p)[:, None], [[0, p]], samples)
        big = t.v > 1e-6
        np.testing.assert_allclose((t.tau2_mu * q)[big], t.v[big], rtol=1e-12)
        np.testing.assert_allclose((t.tau2_sigma * (q - 1) / 2)[big], (t.v**2)[big], rtol=1e-12)
        assert np.all(t.tau2_mu > 0) and np.all(t.tau2_sigma > 0)

    def test_floor_for_constant_replicates(self):
        t = TrainingTable.from_samples([[0.0], [1.0]], [[0, 1]], np.full((2, 5, 1), 12.0))
        assert np.all(t.v == 0)
        assert np.all(t.tau2_mu == 1e-12) and np.all(t.tau2_sigma == 1e-12)

    def test_ess_error_inflates_autocorrelated(self):
        rng = np.random.default_rng(0)
        e = rng.normal(size=400)
        x = np.empty(400)
        x[0] = e[0]
        for i in range(1, 400):
            x[i] = 0.9 * x[i - 1] + e[i]
        samples = x.reshape(1, 400, 1)
        iid = TrainingTable.from_samples([[0.0]], [[0, 1]], samples, mc_error="iid")
        ess = TrainingTable.from_samples([[0.0]], [[0, 1]], samples, mc_error="ess")
        assert ess.tau2_mu[0, 0] > 5 * iid.tau2_mu[0, 0]
        assert ess.m[0, 0] == iid.m[0, 0] and ess.v[0, 0] == iid.v[0, 0]

    def test_needs_two_replicates(self):
        with pytest.raises(InvalidInputError):
            TrainingTable.from_samples([[0.0]], [[0, 1]], np.ones((1, 1, 1)))

    def test_csv_roundtrip(self, tmp_path):
        rng = np.random.default_rng(1)
        t = TrainingTable.from_samples(make_design([[-0.2, 0.1], [0.7, 1.2]], (2, 3)).points,
                                       [[-0.2, 0.1], [0.7, 1.2]], rng.normal(size=(6, 4, 2)),
                                       provenance={"seed": 3})
        path = tmp_path / "table.csv"
        t.save(path)
        header = path.read_text().splitlines()[0]
        assert header == "d,j,beta_1,beta_2,m,v,tau2_mu,tau2_sigma,q"
        assert len(path.read_text().splitlines()) == 1 + 6 * 2
        back = TrainingTable.load(path)
        for name in ("points", "m", "v", "tau2_mu", "tau2_sigma"):
            np.testing.assert_array_equal(getattr(back, name), getattr(t, name))
        assert back.provenance == {"seed": 3} and back.digest() == t.digest()


class TestSimulate:
    def test_oracle_mean(self):
        spec = ModelSpec.potts(2)
        t = simulate_training_table(Design([[0.6]], [[0.0, 1.0]]), spec, (3, 3), 10_000, 3, 50, seed=1)
        mu, _ = exact_moments(spec, 0.6, (3, 3))
        assert abs(t.m[0, 0] - mu[0]) < 4 * np.sqrt(t.tau2_mu[0, 0])

    def test_zero_beta_mean(self):
        spec = ModelSpec.potts(3)
        t = simulate_training_table(Design([[0.0]], [[0.0, 1.0]]), spec, (4, 4), 2000, 1, 5, seed=2,
                                    mc_error="iid")
        assert abs(t.m[0, 0] - 24 / 3) < 4 * np.sqrt(t.tau2_mu[0, 0])

    def test_minimal_q(self):
        t = simulate_training_table(make_design([[0.1, 0.9]], 3), ModelSpec.potts(2), (3, 3), 2, 1, 2, seed=0)
        assert np.all(np.isfinite(t.v)) and np.all(np.isfinite(t.tau2_mu)) and np.all(np.isfinite(t.tau2_sigma))

    def test_deterministic_and_worker_independent(self):
        d = make_design([[0.2, 1.0]], 5)
        spec = ModelSpec.potts(3)
        a = simulate_training_table(d, spec, (5, 5), 20, 2, 10, seed=7)
        b = simulate_training_table(d, spec, (5, 5), 20, 2, 10, seed=7, workers=3)
        assert a.to_csv() == b.to_csv()

    def test_rows_follow_design_order(self):
        spec = ModelSpec.potts(2)
        d = make_design([[0.2, 1.0]], 4)
        a = simulate_training_table(d, spec, (3, 3), 30, 1, 5, seed=4)
        perm = [2, 0, 3, 1]
        b = simulate_training_table(Design(d.points[perm], d.bounds), spec, (3, 3), 30, 1, 5, seed=4)
        for name in ("points", "m", "v", "tau2_mu", "tau2_sigma"):
            np.testing.assert_array_equal(getattr(b, name), getattr(a, name)[perm])

    def test_autologistic_table(self):
        d = make_design([[-0.2, 0.1], [0.7, 1.2]], (2, 2))
        t = simulate_training_table(d, ModelSpec.autologistic(), (4, 4), 10, 1, 5, seed=0)
        assert t.m.shape == (4, 2) and t.provenance["sampler"] == "auto"
