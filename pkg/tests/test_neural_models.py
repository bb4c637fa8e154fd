import math

import numpy as np
import pytest

from gustcast.autodiff import Tensor, mse_loss
from gustcast.data import tabular_features, window_samples
from gustcast.data.windows import FarmPanel, tabular_column_names
from gustcast.data.features import cyclic_time_features
from gustcast.neural import (
    ArraySource, CnnHead, CnnHeadConfig, History, NeuralConfig, TrainingConfig, TrainingDivergedError,
    UntrainedModelError, build_model, evaluate_mse, extract_conv_features, hybrid_fit, load_model, predict,
    save_model, train,
)
from gustcast.trees import GbmParams, fit_gbm
from oracles import sampled_gradient_errors

MICRO = NeuralConfig(gfs_grid=(3, 3, 2), arp_grid=(3, 3, 3), horizon=3, lookback=6, n_farms=3,
                     head=CnnHeadConfig(filters=(4, 2)), encoder_units=(4, 3), dense_units=(5, 4))


def micro_arrays(n, seed=0, config=MICRO):
    rng = np.random.default_rng(seed)
    hz = config.horizon
    return {"x_lags": rng.random((n, config.lookback, 1)), "x_gfs": rng.random((n, hz) + config.gfs_grid),
            "x_arp": rng.random((n, hz) + config.arp_grid), "x_time": rng.uniform(-1, 1, (n, hz, 4)),
            "x_farm": np.eye(config.n_farms)[rng.integers(0, config.n_farms, n)], "y": rng.random((n, hz))}


def full_arrays(n, seed=0):
    return micro_arrays(n, seed, NeuralConfig())


def loss_fn(model, batch, mask_seed=5):
    target = Tensor(batch["y"])

    def fn():
        model.set_dropout_rng(np.random.default_rng(mask_seed))
        return mse_loss(model(batch), target)
    return fn


def jitter(model, seed, scale=0.05):
    """Move every parameter off its initial value so no ReLU sits exactly on its kink."""
    rng = np.random.default_rng(seed)
    for p in model.parameters():
        p.data = p.data + rng.normal(0, scale, p.shape)
    return model


def zero_all(model, output_bias):
    for name, p in model.named_parameters().items():
        p.data = np.zeros_like(p.data)
    model.head.output.bias.data[:] = output_bias


class TestShapes:
    @pytest.mark.parametrize("kind", ["cnn", "cnn-rnn"])
    def test_full_output_shape(self, kind):
        model = build_model(kind).eval()
        assert model(full_arrays(2)).shape == (2, 24)

    def test_fused_widths(self):
        assert build_model("cnn").fused_width == 512 + 512 + 4 + 7 == 1035
        assert build_model("cnn-rnn").fused_width == 64 + 512 + 512 + 4 + 7

    def test_head_width_from_shape_arithmetic(self):
        cfg = CnnHeadConfig()
        assert cfg.output_grid(4, 4) == (2, 2) and cfg.output_grid(5, 5) == (2, 2)
        assert cfg.flat_width(4, 4) == cfg.flat_width(5, 5) == 512

    def test_valid_padding_too_small_rejected(self):
        with pytest.raises(ValueError, match="too small"):
            CnnHeadConfig(padding=("valid", "valid")).flat_width(4, 4)

    def test_head_needs_two_layers(self):
        with pytest.raises(ValueError):
            CnnHeadConfig(filters=(8, 4, 2))

    @pytest.mark.parametrize("key", ["x_gfs", "x_arp", "x_time", "x_farm", "x_lags"])
    def test_shape_mismatch_raises(self, key):
        model = build_model("cnn-rnn", MICRO)
        batch = micro_arrays(2)
        batch[key] = batch[key][..., :-1]
        with pytest.raises(ValueError, match=key):
            model(batch)

    def test_missing_lags_raise_for_cnn_rnn_only(self):
        batch = micro_arrays(2)
        del batch["x_lags"]
        assert build_model("cnn", MICRO).eval()(batch).shape == (2, 3)
        with pytest.raises(ValueError, match="x_lags"):
            build_model("cnn-rnn", MICRO)(batch)

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="unknown"):
            build_model("transformer")

    def test_head_params_independent_of_horizon(self):
        rng = np.random.default_rng(0)
        short = build_model("cnn-rnn", NeuralConfig(horizon=3))
        long = build_model("cnn-rnn", NeuralConfig(horizon=24))
        for name in ("gfs_head", "arp_head"):
            assert getattr(short, name).num_parameters() == getattr(long, name).num_parameters()
        assert short.num_parameters() == long.num_parameters()
        head = CnnHead((4, 4, 9), CnnHeadConfig(), rng, np.float64)
        assert head.num_parameters() == 4 * 4 * 9 * 264 + 2 * 264 + 2 * 2 * 264 * 128 + 2 * 128


class TestForwardProperties:
    def test_zero_weights_give_output_bias(self):
        for kind in ("cnn", "cnn-rnn"):
            model = build_model(kind, MICRO)
            zero_all(model, 0.37)
            model.eval()
            np.testing.assert_array_equal(model(micro_arrays(5)).data, np.full((5, 3), 0.37))

    def test_zero_weights_full_size(self):
        model = build_model("cnn")
        zero_all(model, -1.25)
        np.testing.assert_array_equal(model.eval()(full_arrays(2)).data, np.full((2, 24), -1.25))

    @pytest.mark.parametrize("training", [False, True])
    def test_spatial_cnn_step_permutation_equivariance(self, training):
        model = build_model("cnn", MICRO, seed=3)
        model.train(training)
        batch = micro_arrays(6, seed=1)
        perm = np.array([2, 0, 1])
        permuted = {k: (v[:, perm] if k in ("x_gfs", "x_arp", "x_time") else v) for k, v in batch.items()}
        model.set_dropout_rng(None)
        if training:
            model.gfs_head.config = model.arp_head.config = CnnHeadConfig(filters=(4, 2), dropout=0.0)
        a = model(batch).data
        b = model(permuted).data
        np.testing.assert_allclose(b, a[:, perm], rtol=1e-12, atol=1e-12)

    def test_all_zero_lag_batches_identical(self):
        model = build_model("cnn-rnn", MICRO, seed=2).eval()
        batch = micro_arrays(4, seed=0)
        first = dict(batch, x_lags=np.zeros_like(batch["x_lags"]))
        second = dict(batch, x_lags=np.zeros((4, MICRO.lookback, 1)))
        np.testing.assert_array_equal(model(first).data, model(second).data)

    def test_lags_matter_for_cnn_rnn(self):
        model = build_model("cnn-rnn", MICRO, seed=2).eval()
        batch = micro_arrays(4, seed=0)
        shifted = dict(batch, x_lags=batch["x_lags"] + 0.5)
        assert not np.array_equal(model(batch).data, model(shifted).data)

    def test_decoder_starts_from_top_encoder_state(self):
        model = build_model("cnn-rnn", MICRO, seed=4).eval()
        batch = micro_arrays(3, seed=2)
        finals = model.encode(batch["x_lags"])
        assert len(finals) == 2 and finals[-1].hidden.shape == (3, MICRO.decoder_units)
        # zeroing the lower layer's recurrent path changes the top state, and hence the forecast
        before = model(batch).data
        model.encoder[0].input_weight.data = model.encoder[0].input_weight.data * 0
        assert not np.array_equal(before, model(batch).data)

    def test_infer_mode_deterministic(self):
        model = build_model("cnn-rnn", MICRO, seed=1).eval()
        batch = micro_arrays(4)
        np.testing.assert_array_equal(model(batch).data, model(batch).data)

    def test_dropout_needs_rng_in_train_mode(self):
        model = build_model("cnn", MICRO)
        with pytest.raises(ValueError, match="rng"):
            model(micro_arrays(2))


class TestGradients:
    @pytest.mark.parametrize("seed", range(3))
    def test_micro_cnn_rnn_matches_finite_differences(self, seed):
        model = jitter(build_model("cnn-rnn", MICRO, seed=seed), seed)
        batch = micro_arrays(4, seed=seed)
        errors = sampled_gradient_errors(loss_fn(model, batch), model.parameters(), np.random.default_rng(seed))
        assert max(errors) < 1e-5

    def test_micro_spatial_cnn_matches_finite_differences(self):
        model = jitter(build_model("cnn", MICRO, seed=7), 7)
        batch = micro_arrays(4, seed=7)
        errors = sampled_gradient_errors(loss_fn(model, batch), model.parameters(), np.random.default_rng(7))
        assert max(errors) < 1e-5

    @pytest.mark.parametrize("kind", ["cnn", "cnn-rnn"])
    def test_every_parameter_receives_gradient(self, kind):
        model = build_model(kind, MICRO, seed=0)
        loss_fn(model, micro_arrays(8, seed=3))().backward()
        dead = [n for n, p in model.named_parameters().items() if p.grad is None or not np.linalg.norm(p.grad) > 0]
        assert dead == []


class TestTraining:
    def test_single_epoch(self):
        data = ArraySource(micro_arrays(20))
        _, history = train(build_model("cnn-rnn", MICRO), data, data, TrainingConfig(max_epochs=1, patience=0))
        assert history.epochs == [1] and len(history.val_mse) == 1

    def test_patience_zero_stops_at_first_non_improvement(self):
        train_set, val_set = ArraySource(micro_arrays(32, 0)), ArraySource(micro_arrays(16, 1))
        _, history = train(build_model("cnn", MICRO), train_set, val_set,
                           TrainingConfig(batch_size=8, max_epochs=40, patience=0, learning_rate=0.05))
        vals = history.val_mse
        assert all(b < a for a, b in zip(vals[:-2], vals[1:-1]))
        if len(vals) < 40:
            assert vals[-1] >= min(vals[:-1])

    def test_returned_weights_reach_history_minimum(self):
        train_set, val_set = ArraySource(micro_arrays(48, 0)), ArraySource(micro_arrays(16, 1))
        model, history = train(build_model("cnn-rnn", MICRO, seed=2), train_set, val_set,
                               TrainingConfig(batch_size=16, max_epochs=12, patience=12, learning_rate=0.03))
        assert evaluate_mse(model, val_set) == min(history.val_mse)
        assert history.val_mse[history.best_epoch - 1] == history.best_val_mse

    def test_seeded_determinism(self):
        def run():
            data = ArraySource(micro_arrays(40, 0))
            model, history = train(build_model("cnn-rnn", MICRO, seed=1), data, ArraySource(micro_arrays(10, 1)),
                                   TrainingConfig(batch_size=16, max_epochs=3, seed=9, patience=3))
            return history, predict(model, data)
        (h1, p1), (h2, p2) = run(), run()
        assert h1.train_mse == h2.train_mse and h1.val_mse == h2.val_mse
        np.testing.assert_array_equal(p1, p2)

    def test_seed_changes_batch_order(self):
        data = ArraySource(micro_arrays(40, 0))
        runs = [train(build_model("cnn", MICRO, seed=1), data, None,
                      TrainingConfig(batch_size=8, max_epochs=1, seed=s, patience=1))[1].train_mse for s in (0, 1)]
        assert runs[0] != runs[1]

    def test_micro_overfit(self):
        data = ArraySource(micro_arrays(16, 0))
        _, history = train(build_model("cnn-rnn", MICRO, seed=0), data, None,
                           TrainingConfig(batch_size=16, max_epochs=150, learning_rate=0.01))
        assert history.train_mse[-1] < 0.2 * history.initial_train_mse

    def test_stop_below_ratio(self):
        data = ArraySource(micro_arrays(16, 0))
        config = TrainingConfig(batch_size=16, max_epochs=150, learning_rate=0.01, stop_below_ratio=0.5)
        _, history = train(build_model("cnn-rnn", MICRO, seed=0), data, None, config)
        ratios = np.array(history.train_mse) / history.initial_train_mse
        assert len(history.epochs) < 150
        assert ratios[-1] < 0.5 and np.all(ratios[:-1] >= 0.5)

    def test_no_validation_runs_all_epochs(self):
        data = ArraySource(micro_arrays(10))
        model, history = train(build_model("cnn", MICRO), data, None, TrainingConfig(max_epochs=4, patience=0))
        assert history.epochs == [1, 2, 3, 4] and all(math.isnan(v) for v in history.val_mse)
        assert model.trained and not model.training

    def test_nan_loss_aborts_with_diagnostic(self):
        arrays = micro_arrays(10)
        arrays["y"][3, 1] = np.nan
        with pytest.raises(TrainingDivergedError, match="epoch 1, batch 0"):
            train(build_model("cnn", MICRO), ArraySource(arrays), None, TrainingConfig(max_epochs=2, patience=2))

    def test_empty_sets_rejected(self):
        data = ArraySource(micro_arrays(4))
        empty = ArraySource({k: v[:0] for k, v in micro_arrays(4).items()})
        with pytest.raises(ValueError):
            train(build_model("cnn", MICRO), empty, data)
        with pytest.raises(ValueError):
            train(build_model("cnn", MICRO), data, empty)

    @pytest.mark.parametrize("kwargs", [{"batch_size": 0}, {"max_epochs": 0}, {"patience": 5, "max_epochs": 3}])
    def test_invalid_config(self, kwargs):
        with pytest.raises(ValueError):
            TrainingConfig(**kwargs)

    def test_history_csv(self, tmp_path):
        data = ArraySource(micro_arrays(12))
        _, history = train(build_model("cnn", MICRO), data, data, TrainingConfig(max_epochs=2, patience=2),
                           history_path=tmp_path / "history.csv")
        lines = (tmp_path / "history.csv").read_text().splitlines()
        assert lines[0] == "epoch,train_mse,val_mse" and len(lines) == 3
        back = History.read_csv(tmp_path / "history.csv")
        assert back.train_mse == history.train_mse and back.val_mse == history.val_mse

    @pytest.mark.parametrize("suffix", [".ckpt", ".json"])
    def test_checkpoint_round_trip(self, tmp_path, suffix):
        data = ArraySource(micro_arrays(12))
        model, _ = train(build_model("cnn-rnn", MICRO, seed=5), data, data, TrainingConfig(max_epochs=2, patience=2))
        save_model(tmp_path / f"m{suffix}", model, {"note": "x"})
        back, meta = load_model(tmp_path / f"m{suffix}")
        assert meta["note"] == "x" and back.trained and back.config == MICRO
        np.testing.assert_array_equal(predict(back, data), predict(model, data))

    def test_float32_model(self):
        cfg = NeuralConfig(**{**MICRO.__dict__, "dtype": "float32"})
        data = ArraySource(micro_arrays(8))
        model, history = train(build_model("cnn-rnn", cfg), data, None, TrainingConfig(max_epochs=2, patience=2))
        assert all(p.dtype == np.float32 for p in model.parameters())
        assert predict(model, data).dtype == np.float32


def trained_cnn(config=MICRO, seed=0):
    model = build_model("cnn", config, seed)
    model.eval()
    model.trained = True
    return model


class TestConvFeatures:
    def test_full_width_is_1024(self):
        arrays = full_arrays(2)
        feats = extract_conv_features(trained_cnn(NeuralConfig()), arrays["x_gfs"], arrays["x_arp"])
        assert feats.shape == (2 * 24, 1024)

    def test_untrained_rejected(self):
        arrays = micro_arrays(2)
        with pytest.raises(UntrainedModelError):
            extract_conv_features(build_model("cnn", MICRO), arrays["x_gfs"], arrays["x_arp"])

    def test_infer_mode_bit_identical_and_restores_mode(self):
        model = trained_cnn()
        model.train()
        arrays = micro_arrays(5)
        a = extract_conv_features(model, arrays["x_gfs"], arrays["x_arp"])
        b = extract_conv_features(model, arrays["x_gfs"], arrays["x_arp"], batch_size=2)
        np.testing.assert_array_equal(a, b)
        assert model.training

    def test_step_locality(self):
        model = trained_cnn(seed=3)
        arrays = micro_arrays(4, seed=1)
        base = extract_conv_features(model, arrays["x_gfs"], arrays["x_arp"])
        gfs = arrays["x_gfs"].copy()
        gfs[:, 2] += 1.0
        changed = extract_conv_features(model, gfs, arrays["x_arp"])
        step = np.tile(np.arange(MICRO.horizon), 4)
        assert np.array_equal(base[step != 2], changed[step != 2])
        assert not np.array_equal(base[step == 2], changed[step == 2])

    def test_rows_sample_major(self):
        model = trained_cnn(seed=1)
        arrays = micro_arrays(3, seed=2)
        full = extract_conv_features(model, arrays["x_gfs"], arrays["x_arp"])
        one = extract_conv_features(model, arrays["x_gfs"][1:2], arrays["x_arp"][1:2])
        np.testing.assert_array_equal(full[3:6], one)

    def test_length_mismatch(self):
        arrays = micro_arrays(3)
        with pytest.raises(ValueError):
            extract_conv_features(trained_cnn(), arrays["x_gfs"], arrays["x_arp"][:2])


def random_panel(farm_id, hours=200, seed=0):
    rng = np.random.default_rng(seed)
    ts = np.datetime64("2021-01-01T00", "h") + np.arange(hours).astype("timedelta64[h]")
    return FarmPanel(farm_id, ts, rng.uniform(size=hours), rng.uniform(size=(hours, 4, 4, 9)),
                     rng.uniform(size=(hours, 5, 5, 11)), cyclic_time_features(ts))


class TestHybrid:
    def test_column_count(self):
        ds = window_samples(random_panel(0), stride=24)
        for lags, width in ((False, 430), (True, 478)):
            original = tabular_features(ds, include_lags=lags)
            assert original.shape[1] == width == len(tabular_column_names(n_lags=48 if lags else 0))
            conv = np.zeros((len(original), 1024))
            model = hybrid_fit(conv, original, ds.targets().reshape(-1), GbmParams(n_estimators=2, num_leaves=4,
                                                                                   min_child_samples=5))
            assert model.n_original + model.n_conv == width + 1024

    def test_zero_conv_model_matches_plain_gbm(self):
        rng = np.random.default_rng(0)
        original = rng.normal(size=(300, 12))
        y = original[:, 0] - 2 * original[:, 3] ** 2 + rng.normal(0, 0.1, 300)
        model = build_model("cnn", MICRO)
        zero_all(model, 0.0)
        model.trained = True
        arrays = micro_arrays(100)
        conv = extract_conv_features(model, arrays["x_gfs"], arrays["x_arp"])
        assert conv.shape == (300, 4) and np.all(conv == conv[0])
        params = GbmParams(n_estimators=15, num_leaves=6, min_child_samples=10)
        hybrid = hybrid_fit(conv, original, y, params)
        plain = fit_gbm(original, y, params)
        np.testing.assert_array_equal(hybrid.predict(original, conv, np.zeros(300)), plain.predict(original))
        used = {int(f) for t in hybrid.models[0].trees for f in t.feature if f >= 0}
        assert used and max(used) < 12

    def test_per_farm_provenance(self):
        rng = np.random.default_rng(1)
        farms = np.repeat([0, 2, 5], 60)
        X, conv, y = rng.normal(size=(180, 3)), rng.normal(size=(180, 2)), rng.normal(size=180)
        model = hybrid_fit(conv, X, y, GbmParams(n_estimators=3, num_leaves=4, min_child_samples=5), farms)
        assert sorted(model.models) == [0, 2, 5]
        for farm, rows in model.rows.items():
            assert np.all(farms[rows] == farm) and len(rows) == 60
        solo = fit_gbm(np.hstack([X, conv])[farms == 2], y[farms == 2], model.models[2].params)
        rows2 = farms == 2
        np.testing.assert_array_equal(model.predict(X, conv, farms)[rows2], solo.predict(np.hstack([X, conv])[rows2]))

    def test_row_mismatch(self):
        with pytest.raises(ValueError, match="row mismatch"):
            hybrid_fit(np.zeros((5, 2)), np.zeros((6, 3)), np.zeros(6))
        with pytest.raises(ValueError, match="row mismatch"):
            hybrid_fit(np.zeros((6, 2)), np.zeros((6, 3)), np.zeros(5))

    def test_unknown_farm_at_predict(self):
        model = hybrid_fit(np.zeros((60, 1)), np.arange(60.0)[:, None], np.arange(60.0),
                           GbmParams(n_estimators=1, num_leaves=2, min_child_samples=5), np.zeros(60))
        with pytest.raises(KeyError):
            model.predict(np.zeros((2, 1)), np.zeros((2, 1)), np.array([3, 3]))
