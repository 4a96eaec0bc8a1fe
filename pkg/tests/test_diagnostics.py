import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gesurrogate.diagnostics import (
    ANTITHETIC,
    DEGENERATE,
    autocorrelation,
    ess_is,
    ess_mcmc,
    mcse,
    weighted_moments,
)
from gesurrogate.inference import PosteriorTrace, summarize, summary_rows


class TestESS:
    def test_iid_gaussian(self):
        x = np.random.default_rng(0).standard_normal(10_000)
        ess, flags = ess_mcmc(x)
        assert abs(ess[0] - 1e4) < 0.1 * 1e4
        assert flags == [""]

    def test_ar1(self):
        # AR(1) with rho = 0.9 has ESS = T (1 - rho) / (1 + rho)
        rng = np.random.default_rng(1)
        T, rho = 200_000, 0.9
        e = rng.standard_normal(T)
        x = np.empty(T)
        x[0] = e[0]
        for t in range(1, T):
            x[t] = rho * x[t - 1] + np.sqrt(1 - rho**2) * e[t]
        ess, _ = ess_mcmc(x)
        assert ess[0] == pytest.approx(T * (1 - rho) / (1 + rho), rel=0.1)

    def test_alternating(self):
        x = np.tile([1.0, -1.0], 500)
        ess, flags = ess_mcmc(x)
        assert ess[0] == 1000
        assert flags == [ANTITHETIC]

    def test_constant(self):
        ess, flags = ess_mcmc(np.full(50, 2.5))
        assert ess[0] == 1
        assert flags == [DEGENERATE]

    def test_columns(self):
        rng = np.random.default_rng(2)
        x = np.column_stack([rng.standard_normal(500), np.zeros(500)])
        ess, flags = ess_mcmc(x)
        assert ess.shape == (2,)
        assert flags[1] == DEGENERATE

    def test_short_chain(self):
        with pytest.raises(ValueError):
            ess_mcmc(np.arange(5.0))

    def test_autocorrelation_lag0(self):
        rho = autocorrelation(np.random.default_rng(3).standard_normal(100))
        assert rho[0] == pytest.approx(1.0)

    @given(st.integers(10, 300), st.integers(0, 2**32 - 1))
    def test_bounds(self, T, seed):
        x = np.random.default_rng(seed).standard_normal(T)
        ess, _ = ess_mcmc(x)
        assert 1 <= ess[0] <= T


class TestImportanceESS:
    def test_uniform(self):
        assert ess_is(np.full(400, 1 / 400)) == pytest.approx(400)

    def test_one_hot(self):
        w = np.zeros(30)
        w[7] = 1.0
        assert ess_is(w) == 1.0

    def test_three_quarters(self):
        assert ess_is([0.75, 0.25]) == pytest.approx(1.6)

    @given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=50).filter(lambda v: sum(v) > 1e-3))
    def test_range(self, raw):
        w = np.array(raw) / np.sum(raw)
        assert 1 - 1e-9 <= ess_is(w) <= w.size + 1e-9


class TestSummaries:
    def test_weighted_moments(self):
        mean, sd = weighted_moments([0.0, 1.0], [0.75, 0.25])
        assert mean[0] == pytest.approx(0.25)
        assert sd[0] == pytest.approx(np.sqrt(0.1875))

    def test_mcse_iid(self):
        x = np.random.default_rng(4).standard_normal(10_000)
        assert mcse(x)[0] == pytest.approx(0.01, rel=0.1)

    def test_mcse_weighted_uniform(self):
        x = np.random.default_rng(5).standard_normal(4000)
        w = np.full(4000, 1 / 4000)
        assert mcse(x, w)[0] == pytest.approx(x.std() / np.sqrt(4000), rel=1e-12)

    def test_constant_trace(self):
        tr = PosteriorTrace("exchange", np.full((20, 1), 1.17), ess=np.array([1.0]), wall_seconds=36.0)
        s = summarize(tr)
        assert s["posterior_mean"][0] == pytest.approx(1.17, rel=1e-15)
        assert s["posterior_sd"][0] == pytest.approx(0.0, abs=1e-15)
        assert s["time_hours"] == pytest.approx(0.01)
        assert s["ess_per_hour"] == [pytest.approx(100.0)]

    def test_weighted_two_point(self):
        tr = PosteriorTrace("importance-sampling", np.array([[0.0], [1.0]]), weights=np.array([0.75, 0.25]),
                            ess=np.array([1.6]), wall_seconds=1.0)
        s = summarize(tr)
        assert s["posterior_mean"] == [0.25]

    def test_rows(self):
        tr = PosteriorTrace("exchange", np.full((20, 1), 1.0), ess=np.array([1.0]), wall_seconds=3600.0)
        labels = [r[0] for r in summary_rows(summarize(tr))]
        assert labels == ["Posterior mean", "Posterior SD", "Time (hours)", "ESS/hour"]
        labels = [r[0] for r in summary_rows(summarize(tr, timing=False))]
        assert labels == ["Posterior mean", "Posterior SD"]
