import numpy as np
import numpy.testing as npt
import pytest

from shrinknet.errors import ConfigError, FormatError
from shrinknet.models import (Conv, Dense, Model, ModelSpec, build_model,
                              collect_activations, evaluate, lenet5, lenet300,
                              linear, load_checkpoint, mlp, model_inputs,
                              save_checkpoint)


class TestSpecValidation:
    def test_conv_requires_input_shape(self):
        with pytest.raises(ConfigError, match="input_shape"):
            ModelSpec((Conv(1, 4, kernel=3), Dense(4, 2)))

    def test_dense_adjacency_checked(self):
        with pytest.raises(ConfigError, match="expects 5 features"):
            ModelSpec((Dense(3, 4), Dense(5, 2)))

    def test_conv_channel_adjacency(self):
        with pytest.raises(ConfigError, match="channels"):
            ModelSpec(
                (Conv(1, 4, kernel=3), Conv(8, 4, kernel=3)),
                input_shape=(1, 12, 12),
            )

    def test_pool_must_divide(self):
        # 12x12 conv k=3 -> 10x10, pool 4 does not divide
        with pytest.raises(ConfigError, match="does not divide"):
            ModelSpec((Conv(1, 2, kernel=3, pool=4), Dense(8, 2)),
                      input_shape=(1, 12, 12))

    def test_penalize_final_needs_two_layers(self):
        with pytest.raises(ConfigError, match="at least one penalized"):
            ModelSpec((Dense(3, 2),), penalize_final=False)

    def test_penalized_indices(self):
        spec = mlp(4, [3], 2)
        assert spec.penalized_indices() == (0, 1)
        spec = mlp(4, [3], 2, penalize_final=False)
        assert spec.penalized_indices() == (0,)


class TestParameterCounts:
    def test_lenet300_sizes(self):
        m = build_model(lenet300())
        assert m.param_count() == 266_610
        assert m.penalized_count() == 266_200

    def test_lenet300_without_final_penalty(self):
        m = build_model(lenet300(penalize_final=False))
        assert m.param_count() == 266_610
        assert m.penalized_count() == 265_200
        assert m.layers[-1].lam is None

    def test_lenet5_sizes(self):
        m = build_model(lenet5())
        # 20·25+20 + 50·20·25+50 + 800·500+500 + 500·10+10
        assert m.param_count() == 431_080
        assert m.penalized_count() == 430_500

    def test_lenet5_width_rounding(self):
        spec = lenet5(width_multiplier=0.5)
        convs = [l for l in spec.layers if isinstance(l, Conv)]
        assert convs[0].out_channels == 10
        assert convs[1].out_channels == 25
        assert spec.layers[2].out_features == 250

    def test_lenet5_width_floors(self):
        spec = lenet5(width_multiplier=0.01)
        assert spec.layers[0].out_channels == 1
        assert spec.layers[2].out_features == 10
        with pytest.raises(ConfigError, match="width_multiplier"):
            lenet5(width_multiplier=0.0)


class TestInit:
    def test_he_uniform_bounds_and_spread(self):
        m = build_model(mlp(200, [100], 10), seed=0)
        for layer, lp in zip(m.spec.layers, m.layers):
            bound = np.sqrt(6.0 / layer.in_features)
            w = lp.weight.data
            assert np.all(np.abs(w) <= bound)
            # uniform on [-b, b] has variance b^2/3
            npt.assert_allclose(w.var(), bound**2 / 3, rtol=0.15)
            npt.assert_array_equal(lp.bias.data, 0.0)

    def test_lambda_starts_at_one(self):
        m = build_model(mlp(6, [4], 2))
        for _, w, lam in m.penalized_params():
            assert lam.shape == w.data.shape
            npt.assert_array_equal(lam, 1.0)

    def test_seed_determinism(self):
        a = build_model(mlp(6, [4], 2), seed=3)
        b = build_model(mlp(6, [4], 2), seed=3)
        c = build_model(mlp(6, [4], 2), seed=4)
        npt.assert_array_equal(a.layers[0].weight.data, b.layers[0].weight.data)
        assert not np.array_equal(a.layers[0].weight.data, c.layers[0].weight.data)


class TestForward:
    def test_matches_manual_mlp(self):
        m = build_model(mlp(5, [4], 3), seed=1)
        rng = np.random.default_rng(0)
        x = rng.normal(size=(7, 5))
        w1, b1 = m.layers[0].weight.data, m.layers[0].bias.data
        w2, b2 = m.layers[1].weight.data, m.layers[1].bias.data
        expected = np.maximum(x @ w1 + b1, 0.0) @ w2 + b2
        npt.assert_allclose(m.forward(x).data, expected, rtol=1e-12)

    def test_model_inputs_reshapes(self):
        dense = build_model(lenet300())
        conv = build_model(lenet5(width_multiplier=0.05))
        imgs = np.zeros((3, 28, 28))
        assert model_inputs(dense, imgs).shape == (3, 784)
        assert model_inputs(conv, imgs).shape == (3, 1, 28, 28)

    def test_collect_activations_layers_and_batching(self):
        m = build_model(mlp(5, [4], 3), seed=2)
        rng = np.random.default_rng(1)
        x = rng.normal(size=(11, 5))
        acts = collect_activations(m, x, batch_size=4)
        assert len(acts) == 2
        assert acts[0].shape == (11, 4)
        assert acts[1].shape == (11, 3)
        npt.assert_array_equal(acts[0], np.maximum(
            x @ m.layers[0].weight.data + m.layers[0].bias.data, 0.0))
        whole = collect_activations(m, x, batch_size=512)
        npt.assert_array_equal(acts[1], whole[1])

    def test_evaluate_regression_and_classification(self):
        from shrinknet.data import Dataset
        m = build_model(linear(3), seed=0)
        x = np.eye(3)
        y = (x @ m.layers[0].weight.data).ravel()
        loss, acc = evaluate(m, Dataset(x, y, task="regression"))
        assert loss == pytest.approx(0.0, abs=1e-24)
        assert acc is None

        mc = build_model(mlp(4, [6], 3), seed=5)
        ds = Dataset(np.random.default_rng(2).normal(size=(9, 4)),
                     np.array([0, 1, 2] * 3), num_classes=3)
        loss, acc = evaluate(mc, ds, batch_size=4)
        preds = mc.forward(ds.inputs).data.argmax(axis=1)
        assert acc == pytest.approx(np.mean(preds == ds.labels))
        assert np.isfinite(loss)


class TestCopy:
    def test_copy_is_deep(self):
        m = build_model(mlp(4, [3], 2), seed=0)
        c = m.copy()
        c.layers[0].weight.data[0, 0] += 99.0
        c.layers[0].lam[0, 0] = 5.0
        assert m.layers[0].weight.data[0, 0] != c.layers[0].weight.data[0, 0]
        assert m.layers[0].lam[0, 0] == 1.0

    def test_magnitude_vector_layout(self):
        m = build_model(mlp(4, [3], 2), seed=0)
        mags = m.penalized_magnitudes()
        assert mags.shape == (4 * 3 + 3 * 2,)
        npt.assert_array_equal(mags[:12], np.abs(m.layers[0].weight.data).ravel())
        assert m.penalized_lambdas().shape == mags.shape


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        m = build_model(lenet5(width_multiplier=0.1), seed=7)
        m.layers[0].lam += 0.25  # non-trivial coefficients
        p = tmp_path / "m.ckpt"
        save_checkpoint(m, p)
        back = load_checkpoint(p)
        assert back.state_bytes() == m.state_bytes()
        assert back.spec == m.spec
        for a, b in zip(m.layers, back.layers):
            npt.assert_array_equal(a.weight.data, b.weight.data)
            npt.assert_array_equal(a.bias.data, b.bias.data)

    def test_save_load_save_identical(self, tmp_path):
        m = build_model(mlp(6, [5], 2), seed=1)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(m, p1)
        save_checkpoint(load_checkpoint(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.ckpt"
        p.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(FormatError, match="offset 0"):
            load_checkpoint(p)

    def test_truncated_payload_names_offset(self, tmp_path):
        m = build_model(mlp(3, [2], 2), seed=0)
        p = tmp_path / "t.ckpt"
        save_checkpoint(m, p)
        blob = p.read_bytes()
        p.write_bytes(blob[:-3])
        with pytest.raises(FormatError, match="truncated tensor payload"):
            load_checkpoint(p)

    def test_trailing_bytes_rejected(self, tmp_path):
        m = build_model(mlp(3, [2], 2), seed=0)
        p = tmp_path / "x.ckpt"
        save_checkpoint(m, p)
        p.write_bytes(p.read_bytes() + b"\x00" * 8)
        with pytest.raises(FormatError, match="trailing"):
            load_checkpoint(p)

    def test_unpenalized_final_round_trips(self, tmp_path):
        m = build_model(mlp(4, [3], 2, penalize_final=False), seed=2)
        p = tmp_path / "np.ckpt"
        save_checkpoint(m, p)
        back = load_checkpoint(p)
        assert back.layers[-1].lam is None
        assert back.spec.penalize_final is False
