import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import central_difference, max_relative_error
from hybridens.sphere import SphericalGrid
from hybridens.varnet import (
    DenseNet,
    DivergenceError,
    OptimizerConfig,
    VariationalParams,
    elbo_loss,
    forward,
    init_dense,
    inverse_softplus,
    kl_gaussian,
    posttrain_vi,
    pretrain,
    pretrain_loss,
    sample_eps,
    sample_weights,
    softplus,
    weighted_l1,
)

GRID = SphericalGrid(2, 4)  # state dimension 8


def _linear_task(rng, n=256, noise=0.0):
    A = 0.3 * rng.standard_normal((8, 16))
    x = rng.standard_normal((n, 16))
    return A, (x, x @ A.T + noise * rng.standard_normal((n, 8)))


def _single_weight_vp(mu, sigma, prior_std):
    return VariationalParams([np.array([[mu]])], [np.array([[float(inverse_softplus(sigma))]])],
                             [np.zeros(1)], prior_std=prior_std)


class TestForward:
    def test_zero_network(self):
        net = DenseNet([np.zeros((4, 6)), np.zeros((3, 4))], [np.zeros(4), np.zeros(3)])
        assert np.all(forward(net, np.ones(6)) == 0.0)

    def test_identity_layer(self):
        net = DenseNet([np.eye(5)], [np.zeros(5)])
        v = np.arange(5.0)
        assert np.array_equal(forward(net, v), v)

    def test_hand_composition(self):
        rng = np.random.default_rng(0)
        net = init_dense([6, 5, 4, 3], rng)
        net.biases = [rng.standard_normal(b.shape) for b in net.biases]
        x = rng.standard_normal(6)
        w0, w1, w2 = net.weights
        b0, b1, b2 = net.biases
        expected = [
            sum(w2[k, j] * math.tanh(sum(w1[j, i] * math.tanh(sum(w0[i, n] * x[n] for n in range(6)) + b0[i])
                                         for i in range(5)) + b1[j]) for j in range(4)) + b2[k]
            for k in range(3)
        ]
        np.testing.assert_allclose(forward(net, x), expected, rtol=1e-13)

    def test_batch_matches_rows(self):
        rng = np.random.default_rng(1)
        net = init_dense([8, 7, 4], rng, skip="persistence")
        x = rng.standard_normal((5, 8))
        np.testing.assert_allclose(forward(net, x), np.stack([forward(net, r) for r in x]), rtol=1e-14)

    @pytest.mark.parametrize("skip,expected", [("persistence", [3.0, 4.0]), ("extrapolation", [5.0, 6.0])])
    def test_skip_first_guess(self, skip, expected):
        net = DenseNet([np.zeros((2, 4))], [np.zeros(2)], skip)
        assert np.array_equal(forward(net, np.array([1.0, 2.0, 3.0, 4.0])), expected)

    def test_shape_mismatch(self):
        net = init_dense([4, 3], np.random.default_rng(0))
        with pytest.raises(ValueError):
            forward(net, np.ones(5))

    def test_layer_shapes_validated(self):
        with pytest.raises(ValueError):
            DenseNet([np.zeros((3, 4)), np.zeros((2, 2))], [np.zeros(3), np.zeros(2)])
        with pytest.raises(ValueError):
            DenseNet([np.zeros((3, 5))], [np.zeros(3)], skip="persistence")


class TestWeightedL1:
    def test_equal_fields(self):
        x = np.random.default_rng(0).standard_normal((1,) + GRID.shape)
        assert weighted_l1(x, x, GRID, 1.0) == 0.0

    @given(st.floats(-100, 100), st.integers(2, 12), st.integers(4, 12))
    def test_constant_error(self, e, n_lat, n_lon):
        grid = SphericalGrid(n_lat, n_lon)
        t = np.zeros((2,) + grid.shape)
        assert weighted_l1(t + e, t, grid, [1.0, 1.0]) == pytest.approx(abs(e), rel=1e-12, abs=1e-12)

    def test_two_latitudes(self):
        grid = SphericalGrid(2, 4)
        a = grid.area_weights
        err = np.zeros((1, 2, 4))
        err[0, 0], err[0, 1] = 0.5, 2.0
        assert weighted_l1(err, np.zeros_like(err), grid, 1.0) == pytest.approx((a[0] * 0.5 + a[1] * 2.0) / 2)

    def test_flat_inputs_and_variable_weights(self):
        rng = np.random.default_rng(1)
        p, t = rng.standard_normal((2, 2) + GRID.shape)
        w = [2.0, 0.5]
        ref = np.mean(np.array(w)[:, None, None] * GRID.area_weights[:, None] * np.abs(p - t))
        assert weighted_l1(p.ravel(), t.ravel(), GRID, w) == pytest.approx(ref, rel=1e-14)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            weighted_l1(np.zeros((1, 2, 4)), np.zeros((1, 2, 5)), GRID, 1.0)


class TestKL:
    def test_prior_matched(self):
        vp = _single_weight_vp(0.0, 0.3, 0.3)
        assert kl_gaussian(vp) == pytest.approx(0.0, abs=1e-14)

    def test_unit_case(self):
        assert kl_gaussian(_single_weight_vp(1.0, 1.0, 1.0)) == pytest.approx(0.5, abs=1e-12)

    @given(st.floats(-3, 3), st.floats(1e-3, 5), st.floats(1e-3, 5))
    def test_nonnegative(self, mu, sigma, prior_std):
        assert kl_gaussian(_single_weight_vp(mu, sigma, prior_std)) >= -1e-12

    def test_monte_carlo(self):
        mu, sigma, sp = 1.0, 0.5, 1.0
        vp = _single_weight_vp(mu, sigma, sp)
        w = mu + sigma * np.random.default_rng(0).standard_normal(1_000_000)
        log_q = -0.5 * ((w - mu) / sigma) ** 2 - math.log(sigma)
        log_p = -0.5 * (w / sp) ** 2 - math.log(sp)
        assert np.mean(log_q - log_p) == pytest.approx(kl_gaussian(vp), rel=0.01)

    def test_pretrained_prior_centre(self):
        net = init_dense([4, 3], np.random.default_rng(0))
        vp = VariationalParams.from_net(net, prior_std=0.1, init_std=0.1, prior_mean="pretrained")
        assert kl_gaussian(vp) == pytest.approx(0.0, abs=1e-12)

    def test_invalid_prior(self):
        with pytest.raises(ValueError):
            VariationalParams([np.zeros((1, 1))], [np.zeros((1, 1))], [np.zeros(1)], prior_std=0.0)


class TestSampleWeights:
    def test_zero_noise_returns_mean(self):
        net = init_dense([6, 4, 3], np.random.default_rng(0))
        vp = VariationalParams.from_net(net, init_std=0.5)
        drawn = sample_weights(vp, eps=[np.zeros_like(w) for w in net.weights])
        for a, b in zip(drawn.weights, net.weights):
            assert np.array_equal(a, b)

    def test_vanishing_sigma(self):
        net = init_dense([6, 4, 3], np.random.default_rng(0))
        vp = VariationalParams.from_net(net, init_std=1e-300)
        drawn = sample_weights(vp, np.random.default_rng(1))
        for a, b in zip(drawn.weights, net.weights):
            assert np.array_equal(a, b)

    def test_single_weight_moments(self):
        vp = _single_weight_vp(0.7, 0.2, 1.0)
        rng = np.random.default_rng(2)
        n = 100_000
        w = np.array([sample_weights(vp, rng).weights[0][0, 0] for _ in range(n)])
        assert abs(w.mean() - 0.7) < 4 * 0.2 / math.sqrt(n)
        assert w.std() == pytest.approx(0.2, rel=0.02)

    @given(st.floats(-20, 20))
    def test_softplus_round_trip(self, rho):
        assert float(inverse_softplus(softplus(rho))) == pytest.approx(rho, rel=1e-6, abs=1e-6)


class TestELBO:
    def _setup(self, beta=1e-2, seed=0):
        rng = np.random.default_rng(seed)
        net = init_dense([16, 12, 12, 8], rng, skip="persistence")
        net.biases = [0.1 * rng.standard_normal(b.shape) for b in net.biases]
        vp = VariationalParams.from_net(net, prior_std=0.5, beta_kl=beta, init_std=0.05)
        batch = (rng.standard_normal((10, 16)), rng.standard_normal((10, 8)))
        return net, vp, batch, rng

    def test_zero_beta_total_is_l1(self):
        _, vp, batch, rng = self._setup(beta=0.0)
        out = elbo_loss(vp, batch, GRID, rng=rng)
        assert out.total == out.l1 and out.kl > 0

    def test_collapse_matches_pretrain_loss(self):
        net, _, batch, rng = self._setup()
        vp = VariationalParams.from_net(net, init_std=1e-300)
        assert elbo_loss(vp, batch, GRID, rng=rng).l1 == pytest.approx(pretrain_loss(net, batch, GRID).l1, rel=1e-14)

    def test_total_consistent(self):
        _, vp, batch, rng = self._setup()
        out = elbo_loss(vp, batch, GRID, rng=rng)
        assert abs(out.total - (out.l1 + vp.beta_kl * out.kl)) < 1e-12

    def test_gradients_match_finite_differences(self):
        _, vp, batch, rng = self._setup()
        eps = sample_eps(vp, rng)
        out = elbo_loss(vp, batch, GRID, eps=eps)
        params = vp.w_mu + vp.w_rho + vp.biases
        fd = central_difference(lambda: elbo_loss(vp, batch, GRID, eps=eps).total, params)
        analytic = out.grads["w_mu"] + out.grads["w_rho"] + out.grads["biases"]
        assert max_relative_error(analytic, fd) < 1e-4

    def test_pretrain_gradients_match_finite_differences(self):
        net, _, batch, _ = self._setup()
        out = pretrain_loss(net, batch, GRID)
        fd = central_difference(lambda: pretrain_loss(net, batch, GRID).total, net.weights + net.biases)
        assert max_relative_error(out.grads["weights"] + out.grads["biases"], fd) < 1e-4

    def test_averaged_samples(self):
        _, vp, batch, rng = self._setup()
        eps = [sample_eps(vp, rng) for _ in range(3)]
        avg = elbo_loss(vp, batch, GRID, eps=eps, n_samples=3)
        singles = [elbo_loss(vp, batch, GRID, eps=e).l1 for e in eps]
        assert avg.l1 == pytest.approx(np.mean(singles), rel=1e-13)

    def test_non_finite_loss_aborts(self):
        _, vp, batch, rng = self._setup()
        bad = (batch[0], np.full_like(batch[1], np.inf))
        with pytest.raises(DivergenceError):
            elbo_loss(vp, bad, GRID, rng=rng)


class TestPretrain:
    def test_linear_recovery(self):
        rng = np.random.default_rng(0)
        _, data = _linear_task(rng)
        net = DenseNet([np.zeros((8, 16))], [np.zeros(8)])
        opt = OptimizerConfig(lr=0.05, momentum=0.9, steps=3000, batch_size=256, schedule="cosine")
        trained, hist = pretrain(net, data, GRID, opt, rng)
        assert pretrain_loss(trained, data, GRID).l1 < 1e-6
        assert hist[-1] < hist[0]

    def test_zero_steps_unchanged(self):
        rng = np.random.default_rng(0)
        net = init_dense([16, 8], rng)
        out, hist = pretrain(net, _linear_task(rng)[1], GRID, OptimizerConfig(steps=0), rng)
        assert hist == [] and all(np.array_equal(a, b) for a, b in zip(out.weights, net.weights))

    def test_seeded_repeatable(self):
        def run():
            rng = np.random.default_rng(4)
            net = init_dense([16, 10, 8], rng)
            return pretrain(net, _linear_task(rng)[1], GRID, OptimizerConfig(steps=50, batch_size=32), rng,
                            input_noise=0.1)[0]
        a, b = run(), run()
        assert all(np.array_equal(x, y) for x, y in zip(a.weights + a.biases, b.weights + b.biases))

    def test_divergence_aborts(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((32, 16))
        net = DenseNet([np.zeros((8, 16))], [np.zeros(8)])
        with pytest.raises(DivergenceError):
            pretrain(net, (x, np.full((32, 8), np.nan)), GRID, OptimizerConfig(steps=3), rng)

    def test_negative_noise(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError):
            pretrain(init_dense([16, 8], rng), _linear_task(rng)[1], GRID, OptimizerConfig(steps=1), rng,
                     input_noise=-1.0)


class TestPosttrain:
    def _pretrained(self):
        rng = np.random.default_rng(0)
        _, data = _linear_task(rng, noise=0.2)
        net = DenseNet([np.zeros((8, 16))], [np.zeros(8)])
        opt = OptimizerConfig(lr=0.05, steps=1500, batch_size=256)
        return pretrain(net, data, GRID, opt, rng)[0], data

    def test_zero_steps_is_initialization(self):
        net, data = self._pretrained()
        vp, hist = posttrain_vi(net, data, GRID, OptimizerConfig(steps=0), np.random.default_rng(1),
                                prior_std=0.1, init_std=0.02)
        ref = VariationalParams.from_net(net, prior_std=0.1, init_std=0.02)
        assert hist == []
        assert all(np.array_equal(a, b) for a, b in zip(vp.w_mu + vp.w_rho, ref.w_mu + ref.w_rho))

    def test_small_beta_keeps_fit(self):
        net, data = self._pretrained()
        base = pretrain_loss(net, data, GRID).l1
        vp, hist = posttrain_vi(net, data, GRID, OptimizerConfig(lr=1e-3, steps=200, batch_size=64),
                                np.random.default_rng(2), prior_std=2e-4, beta_kl=1e-4, prior_mean="pretrained")
        final = elbo_loss(vp, data, GRID, rng=np.random.default_rng(3))
        assert math.isfinite(final.kl)
        assert abs(final.l1 - base) <= 0.10 * base

    def test_large_beta_is_prior_dominated(self):
        net, data = self._pretrained()
        vp, _ = posttrain_vi(net, data, GRID, OptimizerConfig(lr=1e-3, steps=400, batch_size=64),
                             np.random.default_rng(2), prior_std=0.5, beta_kl=10.0, init_std=0.05)
        mu, sigma = vp.w_mu[0], vp.sigma[0]
        assert np.abs(mu).max() < 0.1 * np.abs(net.weights[0]).max()
        np.testing.assert_allclose(sigma, 0.5, rtol=0.1)

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 1000))
    def test_sigma_stays_positive(self, seed):
        net, data = self._pretrained()
        vp, _ = posttrain_vi(net, data, GRID, OptimizerConfig(lr=1e-2, steps=20, batch_size=32),
                             np.random.default_rng(seed), prior_std=0.01, beta_kl=1.0)
        assert all(np.all(s > 0) for s in vp.sigma)


class TestOptimizerConfig:
    def test_cosine_endpoints(self):
        opt = OptimizerConfig(lr=1.0, lr_min=0.1, steps=11)
        assert opt.rate(0) == 1.0 and opt.rate(10) == pytest.approx(0.1)
        assert opt.rate(5) == pytest.approx(0.55)

    @pytest.mark.parametrize("kw", [{"lr": 0}, {"momentum": 1.0}, {"steps": -1}, {"batch_size": 0},
                                    {"schedule": "step"}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            OptimizerConfig(**kw)
