import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chanpred.errors import ShapeMismatch, TooFewSamples
from chanpred.mlp import (MlpConfig, MlpModel, build_lmmse, forward, gradient_check, init_model,
                          loss_and_grads, pack_input, predict_mlp, preprocess, train, unpack_output,
                          windows)
from chanpred.scm import dft_pilot, generate_trace, ls_estimate, measure, sample_scenario

from conftest import crandn


def small_model(seed, d=2, order=2, width=6, layers=2, activation=None):
    cfg = MlpConfig(input_order=order, hidden_layers=layers, nodes_per_layer=width, seed=seed)
    model = init_model(cfg, d)
    rng = np.random.default_rng(seed + 1)
    model.biases = [rng.standard_normal(b.shape) * 0.1 for b in model.biases]
    model.activation = activation
    return model


def identity_model(d, order=1):
    n_in = 2 * order * d
    w = np.zeros((2 * d, n_in))
    w[:, -2 * d:] = np.eye(2 * d)
    return MlpModel(weights=[w], biases=[np.zeros(2 * d)], input_order=order)


class TestLmmse:
    def test_scalar_gain(self):
        ctx = build_lmmse(dft_pilot(1, 1, 1.0), c_h=[[1.0]])
        assert ctx.gain[0, 0] == pytest.approx(0.5)
        assert preprocess(ctx, np.array([2.0]))[0] == pytest.approx(1.0)
        assert preprocess(ctx, np.zeros(1))[0] == 0

    def test_high_snr_limit(self, rng):
        pilot = dft_pilot(2, 2, 1e6, m_r=2)
        a = crandn(rng, 4, 4)
        ctx = build_lmmse(pilot, c_h=a @ a.conj().T + np.eye(4))
        assert np.linalg.norm(ctx.gain @ pilot.psi_bar - np.eye(4)) < 1e-3

    def test_gain_matches_full_formula(self, rng):
        pilot = dft_pilot(2, 1, 3.0, m_r=3)
        a = crandn(rng, 3, 3)
        c_h = a @ a.conj().T
        ctx = build_lmmse(pilot, c_h=c_h)
        psi = pilot.psi_bar
        c_hy = c_h @ psi.conj().T
        c_y = psi @ c_h @ psi.conj().T + np.eye(6)
        y = crandn(rng, 6)
        np.testing.assert_allclose(preprocess(ctx, y), c_hy @ np.linalg.solve(c_y, y), atol=1e-10)

    def test_beats_ls_at_zero_db(self):
        trace = generate_trace(sample_scenario(1, bs_rows=2, bs_cols=2, n_ue=2), 10_000)
        pilot = dft_pilot(2, 2, 1.0, m_r=4)
        meas = measure(trace, pilot, noise_seed=3)
        ctx = build_lmmse(pilot, meas)
        h = trace.vectors
        g = preprocess(ctx, meas.y)
        mse_lmmse = np.mean(np.sum(np.abs(g - h) ** 2, 1))
        mse_ls = np.mean(np.sum(np.abs(ls_estimate(pilot, meas.y) - h) ** 2, 1))
        assert mse_lmmse <= mse_ls
        # Shrinkage: the denoised vectors carry no more energy than the channel.
        assert np.mean(np.sum(np.abs(g) ** 2, 1)) <= np.mean(np.sum(np.abs(h) ** 2, 1)) * 1.02

    def test_errors(self):
        pilot = dft_pilot(1, 1, 1.0)
        with pytest.raises(TooFewSamples):
            build_lmmse(pilot, np.zeros((0, 1)))
        ctx = build_lmmse(pilot, c_h=[[1.0]])
        with pytest.raises(ShapeMismatch):
            preprocess(ctx, np.zeros(2))


class TestPacking:
    def test_scalar(self):
        np.testing.assert_array_equal(pack_input(np.array([[1 + 2j]])), [1, 2])

    def test_order(self, rng):
        w = crandn(rng, 3, 4)
        x = pack_input(w)
        np.testing.assert_array_equal(x[:4], w[0].real)
        np.testing.assert_array_equal(x[4:8], w[0].imag)
        np.testing.assert_array_equal(x[-4:], w[2].imag)

    @given(st.integers(1, 4), st.integers(1, 6), st.integers(0, 2**31))
    def test_round_trip(self, order, d, seed):
        w = crandn(np.random.default_rng(seed), order, d)
        x = pack_input(w).reshape(order, 2 * d)
        for k in range(order):
            np.testing.assert_array_equal(unpack_output(x[k]), w[k])

    def test_windows(self):
        seq = np.arange(5)[:, None]
        np.testing.assert_array_equal(windows(seq, 3)[:, :, 0], [[0, 1, 2], [1, 2, 3], [2, 3, 4]])
        with pytest.raises(TooFewSamples):
            windows(seq, 6)

    def test_bad_shapes(self):
        with pytest.raises(ShapeMismatch):
            pack_input(np.zeros(3))
        with pytest.raises(ShapeMismatch):
            unpack_output(np.zeros(3))


class TestForward:
    def test_zero_params(self):
        model = small_model(0)
        model.weights = [np.zeros_like(w) for w in model.weights]
        model.biases = [np.zeros_like(b) for b in model.biases]
        np.testing.assert_array_equal(forward(model, np.ones(8)), 0)

    def test_identity(self, rng):
        model = MlpModel(weights=[np.eye(4)], biases=[np.zeros(4)], input_order=1)
        x = rng.standard_normal(4)
        np.testing.assert_array_equal(forward(model, x), x)

    def test_collapse(self, rng):
        model = small_model(3, layers=3)
        w_tot, b_tot = np.eye(model.dims[0]), np.zeros(model.dims[0])
        for w, b in zip(model.weights, model.biases):
            w_tot, b_tot = w @ w_tot, w @ b_tot + b
        x = rng.standard_normal((5, model.dims[0]))
        np.testing.assert_allclose(forward(model, x), x @ w_tot.T + b_tot, atol=1e-10)

    @given(st.floats(0, 1), st.integers(0, 2**31))
    def test_affine(self, a, seed):
        rng = np.random.default_rng(seed)
        model = small_model(seed % 1000)
        x1, x2 = rng.standard_normal((2, model.dims[0]))
        np.testing.assert_allclose(forward(model, a * x1 + (1 - a) * x2),
                                   a * forward(model, x1) + (1 - a) * forward(model, x2), atol=1e-8)

    def test_shape(self):
        with pytest.raises(ShapeMismatch):
            forward(small_model(0), np.ones(3))

    def test_prediction_paths(self, rng):
        y = crandn(rng, 4, 2)
        ctx = build_lmmse(dft_pilot(1, 1, 1.0, m_r=2), c_h=np.eye(2))
        np.testing.assert_allclose(predict_mlp(identity_model(2), ctx, y), preprocess(ctx, y[-1]))
        zero = identity_model(2)
        zero.weights = [np.zeros_like(zero.weights[0])]
        np.testing.assert_array_equal(predict_mlp(zero, ctx, y), 0)
        with pytest.raises(ShapeMismatch):
            predict_mlp(identity_model(2, order=2), ctx, y[:1])


class TestGradients:
    @pytest.mark.parametrize("seed", range(5))
    def test_finite_difference(self, seed, rng):
        model = small_model(seed, d=2, order=2, width=8, layers=2)
        assert model.n_params <= 1000
        x = rng.standard_normal((4, model.dims[0]))
        t = rng.standard_normal((4, model.dims[-1]))
        assert gradient_check(model, x, t) < 1e-5

    def test_finite_difference_tanh(self, rng):
        model = small_model(9, activation="tanh")
        x = rng.standard_normal((3, model.dims[0]))
        t = rng.standard_normal((3, model.dims[-1]))
        assert gradient_check(model, x, t) < 1e-5

    def test_all_zero(self):
        model = small_model(0)
        model.weights = [np.zeros_like(w) for w in model.weights]
        model.biases = [np.zeros_like(b) for b in model.biases]
        _, gw, gb = loss_and_grads(model, np.zeros(8), np.zeros(4))
        assert all(np.all(g == 0) for g in gw + gb)
        assert gradient_check(model, np.zeros(8), np.zeros(4)) == 0.0

    def test_single_layer_formula(self, rng):
        d = 3
        w, b = rng.standard_normal((2 * d, 2 * d)), rng.standard_normal(2 * d)
        model = MlpModel(weights=[w], biases=[b], input_order=1)
        x, t = rng.standard_normal(2 * d), rng.standard_normal(2 * d)
        _, gw, gb = loss_and_grads(model, x, t)
        r = w @ x + b - t
        np.testing.assert_allclose(gw[0], 2 * np.outer(r, x) / d, atol=1e-10)
        np.testing.assert_allclose(gb[0], 2 * r / d, atol=1e-10)


class TestTrain:
    def affine_sequence(self, rng, d=3, slots=300):
        # A unitary map keeps every training pair at the same energy.
        q, _ = np.linalg.qr(crandn(rng, d, d))
        g = np.empty((slots, d), dtype=complex)
        g[0] = crandn(rng, d)
        for n in range(1, slots):
            g[n] = q @ g[n - 1]
        return g

    def test_fits_affine_map(self, rng):
        g = self.affine_sequence(rng)
        cfg = MlpConfig(input_order=1, hidden_layers=1, nodes_per_layer=32, epochs=400,
                        batch_size=32, seed=1)
        hist = np.array(train(cfg, g).loss_history)
        assert hist[-1] <= 1e-4 * hist[0]
        # Epoch losses never rise by more than 5% while above the rounding floor.
        live = hist[:-1] > 1e-12 * hist[0]
        assert np.all(hist[1:][live] <= 1.05 * hist[:-1][live])

    def test_deterministic(self, rng):
        g = self.affine_sequence(rng, slots=60)
        cfg = MlpConfig(input_order=2, hidden_layers=2, nodes_per_layer=8, epochs=5, batch_size=16)
        a, b = train(cfg, g), train(cfg, g)
        for wa, wb in zip(a.weights + a.biases, b.weights + b.biases):
            np.testing.assert_array_equal(wa, wb)

    def test_too_few(self, rng):
        with pytest.raises(TooFewSamples):
            train(MlpConfig(input_order=3, epochs=1), crandn(rng, 10, 2), n_train=3)

    def test_raw_dimensions(self, rng):
        cfg = MlpConfig(input_order=2, hidden_layers=1, nodes_per_layer=4, epochs=1)
        model = train(cfg, crandn(rng, 20, 6), targets=crandn(rng, 20, 3))
        assert model.dims == [24, 4, 6]

    def test_config_validation(self):
        with pytest.raises(ValueError):
            MlpConfig(input_order=0)
        with pytest.raises(ValueError):
            MlpConfig(learning_rate=0.0)
        assert MlpConfig(width_factor=10.0).width(64) == 640
        assert MlpConfig(width_factor=1.0).width(64) == 512
