import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gesurrogate.errors import InvalidInputError
from gesurrogate.gp import AxialWarping, Matern32Kernel, cross_cov_block, kernel_d1, kernel_d2, kernel_eval
from gesurrogate.gp import warp, warp_deriv
from gesurrogate.gp.kernel import pair_terms
from gesurrogate.gp.surrogate import joint_cov

pos = st.floats(0.05, 20.0)
lag = st.floats(-3.0, 3.0)


def random_warping(rng, bounds, n_layers=1, n_basis=20):
    w = AxialWarping.create(bounds, n_basis=n_basis, n_layers=n_layers)
    layers = [rng.exponential(size=lw.shape) for lw in w.layers]
    return w.with_layers(layers)


class TestKernel:
    def test_zero_lag(self):
        k = Matern32Kernel(2.5, 3.0)
        assert kernel_eval(k, 0.4, 0.4) == 2.5
        assert kernel_d1(k, 0.4, 0.4) == 0.0
        assert kernel_d2(k, 0.4, 0.4) == pytest.approx(2.5 * 9.0)

    def test_closed_form(self):
        assert kernel_eval(Matern32Kernel(1.0, 1.0), 0.0, 1.0) == pytest.approx(2 * np.exp(-1))
        assert kernel_eval(Matern32Kernel(1.0, 1.0), 0.0, 1.0) == pytest.approx(0.7358, abs=1e-4)

    def test_invalid(self):
        with pytest.raises(InvalidInputError):
            Matern32Kernel(0.0, 1.0)
        with pytest.raises(InvalidInputError):
            Matern32Kernel(1.0, -1.0)

    @given(pos, pos, lag, lag)
    def test_symmetry(self, xi2, a, x, y):
        k = Matern32Kernel(xi2, a)
        assert kernel_eval(k, x, y) == kernel_eval(k, y, x)

    @given(pos, st.floats(0.1, 5.0), st.floats(0.05, 2.0), st.booleans())
    def test_d1_finite_difference(self, xi2, a, r, neg):
        k = Matern32Kernel(xi2, a)
        wj, wl = 0.0, (-r if neg else r)
        h = 1e-6
        fd = (kernel_eval(k, wj + h, wl) - kernel_eval(k, wj - h, wl)) / (2 * h)
        assert kernel_d1(k, wj, wl) == pytest.approx(fd, rel=1e-5)

    @given(pos, st.floats(0.1, 5.0), st.floats(0.05, 2.0), st.booleans())
    def test_d2_finite_difference(self, xi2, a, r, neg):
        k = Matern32Kernel(xi2, a)
        wj, wl = 0.0, (-r if neg else r)
        h = 1e-4
        fd = (kernel_eval(k, wj + h, wl + h) - kernel_eval(k, wj + h, wl - h)
              - kernel_eval(k, wj - h, wl + h) + kernel_eval(k, wj - h, wl - h)) / (4 * h * h)
        assert kernel_d2(k, wj, wl) == pytest.approx(fd, rel=1e-4, abs=1e-6 * xi2 * a * a)

    def test_pair_terms_gradients(self):
        rng = np.random.default_rng(0)
        H = rng.normal(size=(30, 2))
        xi2, a, d, eps = 1.7, 2.3, 1, 1e-6
        base = pair_terms(xi2, a, H, d, grad=True)
        for c in range(2):
            dH = np.zeros(2)
            dH[c] = eps
            up, dn = pair_terms(xi2, a, H + dH, d), pair_terms(xi2, a, H - dH, d)
            for t in range(3):
                np.testing.assert_allclose(base[3][t][:, c], (up[t] - dn[t]) / (2 * eps), rtol=1e-5, atol=1e-8)
        up, dn = pair_terms(xi2, a + eps, H, d), pair_terms(xi2, a - eps, H, d)
        for t in range(3):
            np.testing.assert_allclose(base[4][t], (up[t] - dn[t]) / (2 * eps), rtol=1e-5, atol=1e-8)


class TestWarping:
    def test_identity(self):
        w = AxialWarping.identity([[0.9, 1.3]])
        x = np.linspace(0.9, 1.3, 17)
        assert np.array_equal(warp(w, x)[:, 0], x)
        assert np.array_equal(warp_deriv(w, x), np.ones_like(x))

    def test_ramp_only_layer_is_identity(self):
        w = AxialWarping.create([[0.9, 1.3]], n_basis=10)
        layer = np.zeros((1, 11))
        layer[0, 0] = 3.0
        w = w.with_layers([layer])
        x = np.linspace(0.9, 1.3, 17)
        np.testing.assert_allclose(warp(w, x)[:, 0], x, atol=1e-14)
        np.testing.assert_allclose(warp_deriv(w, x), 1.0, atol=1e-12)

    @pytest.mark.parametrize("n_layers", [1, 2, 3])
    def test_endpoints_pinned(self, n_layers):
        w = random_warping(np.random.default_rng(n_layers), [[-1.0, 2.0]], n_layers)
        np.testing.assert_allclose(warp(w, np.array([-1.0, 2.0]))[:, 0], [-1.0, 2.0], atol=1e-12)

    @pytest.mark.parametrize("n_layers", [1, 2])
    def test_derivative_finite_difference(self, n_layers):
        rng = np.random.default_rng(10 + n_layers)
        w = random_warping(rng, [[0.9, 1.3]], n_layers)
        x = rng.uniform(0.9 + 1e-3, 1.3 - 1e-3, 100)
        h = 1e-6
        fd = (warp(w, x + h) - warp(w, x - h))[:, 0] / (2 * h)
        np.testing.assert_allclose(warp_deriv(w, x), fd, rtol=1e-6)

    @given(st.integers(0, 10_000), st.integers(1, 3))
    def test_monotone(self, seed, n_layers):
        w = random_warping(np.random.default_rng(seed), [[0.0, 1.0]], n_layers)
        x = np.linspace(0, 1, 200)
        y = warp(w, x)[:, 0]
        assert np.all(np.diff(y) >= 0)
        assert np.all(warp_deriv(w, x) >= 0)

    def test_clamps_with_warning(self):
        w = random_warping(np.random.default_rng(0), [[0.0, 1.0]])
        with pytest.warns(UserWarning):
            out, flags = w.warp(np.array([[-0.5], [0.5], [1.5]]), return_flags=True)
        assert flags.tolist() == [True, False, True]
        assert out[0, 0] == pytest.approx(0.0) and out[2, 0] == pytest.approx(1.0)

    def test_negative_weights_rejected(self):
        w = AxialWarping.create([[0.0, 1.0]], n_basis=5)
        with pytest.raises(InvalidInputError):
            w.with_layers([-np.ones((1, 6))])

    def test_default_sharpness(self):
        w = AxialWarping.create([[0.9, 1.3]])
        assert w.n_basis == 100 and w.sharpness[0] == pytest.approx(20 / 0.4)
        assert w.centers[0, 0] == 0.9 and w.centers[0, -1] == 1.3

    def test_dict_roundtrip(self):
        w = random_warping(np.random.default_rng(1), [[0.0, 1.0], [2.0, 3.0]], 2)
        back = AxialWarping.from_dict(w.to_dict())
        x = np.random.default_rng(2).uniform([0, 2], [1, 3], size=(10, 2))
        assert np.array_equal(back.warp(x), w.warp(x))

    def test_backward_matches_finite_difference(self):
        rng = np.random.default_rng(3)
        w = random_warping(rng, [[0.0, 1.0]], 2, n_basis=6)
        x = rng.uniform(0, 1, (12, 1))
        gw, gg = rng.normal(size=12), rng.normal(size=12)

        def loss(layers):
            ww = w.with_layers(layers)
            y, g = ww.warp_with_deriv(x, 0)
            return gw @ y[:, 0] + gg @ g

        grads = w.backward(x, 0, gw, gg)
        eps = 1e-7
        for li in range(2):
            for b in range(7):
                up = [lw.copy() for lw in w.layers]
                dn = [lw.copy() for lw in w.layers]
                up[li][0, b] += eps
                dn[li][0, b] -= eps
                assert grads[li, b] == pytest.approx((loss(up) - loss(dn)) / (2 * eps), rel=1e-5, abs=1e-8)


class TestCrossCov:
    def test_zero_lag(self):
        rng = np.random.default_rng(4)
        w = random_warping(rng, [[0.9, 1.3]])
        k = Matern32Kernel(1.3, 7.0)
        B = cross_cov_block(k, w, [1.1], [1.1])
        g = warp_deriv(w, 1.1)
        assert B[0, 1] == 0 and B[1, 0] == 0
        assert B[0, 0] == pytest.approx(1.3)
        assert B[1, 1] == pytest.approx(1.3 * 49 * g * g)

    def test_transpose_symmetry(self):
        rng = np.random.default_rng(5)
        w = random_warping(rng, [[0.9, 1.3]])
        k = Matern32Kernel(2.0, 9.0)
        np.testing.assert_allclose(cross_cov_block(k, w, [1.0], [1.2]), cross_cov_block(k, w, [1.2], [1.0]).T)

    def test_2d_blocks_derivative_in_dimension_d(self):
        rng = np.random.default_rng(6)
        bounds = [[-0.2, 0.1], [0.7, 1.2]]
        w = random_warping(rng, bounds, n_basis=8)
        k = Matern32Kernel(1.5, 4.0)
        bj, bl = np.array([-0.1, 0.8]), np.array([0.05, 1.1])
        eps = 1e-6
        for d in range(2):
            e = np.eye(2)[d] * eps
            B = cross_cov_block(k, w, bj, bl, d)
            fd = (cross_cov_block(k, w, bj + e, bl, d)[0, 0] - cross_cov_block(k, w, bj - e, bl, d)[0, 0]) / (2 * eps)
            assert B[1, 0] == pytest.approx(fd, rel=1e-5)

    def test_joint_cov_symmetric(self):
        rng = np.random.default_rng(7)
        W = rng.uniform(size=(6, 1))
        G = rng.uniform(0.5, 2, size=6)
        t = np.array([False] * 3 + [True] * 3)
        W2, G2 = np.vstack([W[:3], W[:3]]), np.r_[G[:3], G[:3]]
        K = joint_cov(1.0, 3.0, W2, G2, W2, G2, 0, t, t)
        np.testing.assert_allclose(K, K.T, atol=1e-14)
        assert np.linalg.eigvalsh(K).min() > -1e-10
