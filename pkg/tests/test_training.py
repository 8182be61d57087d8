import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from diner.exceptions import ConfigError, NumericError, ShapeError
from diner.network import BackboneSpec, forward
from diner.training import (MetricsLog, SampleSet, TrainConfig, build_model, fit, fit_signal,
                            invariance_report, psnr, psnr_from_mse, rearrange)


# ------------------------------------------------------------------ psnr

def test_psnr_identical_is_inf():
    a = np.random.default_rng(0).random((4, 4))
    assert psnr(a, a) == math.inf


@pytest.mark.parametrize("mse,db", [(1e-3, 30.0), (0.01, 20.0)])
def test_psnr_analytic(mse, db):
    assert abs(psnr_from_mse(mse) - db) < 1e-12
    a = np.zeros(100)
    b = np.full(100, math.sqrt(mse))
    assert abs(psnr(a, b) - db) < 1e-9


def test_psnr_clamps():
    assert psnr(np.array([1.5, -0.2]), np.array([1.0, 0.0])) == math.inf


def test_psnr_shape_mismatch():
    with pytest.raises(ShapeError):
        psnr(np.zeros(3), np.zeros(4))


# ------------------------------------------------------------- rearrange

def _data(values, shape=None):
    values = np.asarray(values, dtype=float)
    return SampleSet(shape or (len(values),), values)


def test_rearrange_identity():
    data = _data([0.9, 0.1, 0.5])
    out, perm = rearrange(data, "identity")
    assert list(perm) == [0, 1, 2]
    assert np.array_equal(out.values, data.values)


def test_rearrange_sorted_example():
    out, perm = rearrange(_data([0.9, 0.1, 0.5]), "sorted")
    assert list(out.values.ravel()) == [0.1, 0.5, 0.9]
    assert list(perm) == [1, 2, 0]


def test_rearrange_sorted_ties_keep_index_order():
    _, perm = rearrange(_data([0.5, 0.2, 0.5, 0.2]), "sorted")
    assert list(perm) == [1, 3, 0, 2]


def test_rearrange_sorted_rgb_uses_luminance():
    rgb = np.array([[1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0]])
    _, perm = rearrange(SampleSet((3,), rgb), "sorted")
    assert list(perm) == [2, 0, 1]  # 0.114 < 0.299 < 0.587


def test_rearrange_unknown():
    with pytest.raises(ConfigError):
        rearrange(_data([0.1]), "spiral")


@given(hnp.arrays(np.float64, st.integers(1, 64), elements=st.floats(0, 1)),
       st.sampled_from(["identity", "sorted", "random"]), st.integers(0, 1000))
def test_rearrange_keeps_histogram(values, order, seed):
    data = _data(values)
    out, perm = rearrange(data, order, seed)
    assert np.array_equal(np.sort(out.values.ravel()), np.sort(values))
    assert np.array_equal(out.values, data.values[perm])


# ------------------------------------------------------------ MetricsLog

def test_metrics_csv_round_trip():
    log = MetricsLog()
    log.append(0, 0.5, 3.0103, 1.0)
    log.append(100, 1e-3, 30.0, 20.5)
    text = log.to_csv()
    assert text.splitlines()[0] == "epoch,loss,psnr_db,wall_ms"
    back = MetricsLog.from_csv(text)
    assert back.rows == log.rows


def test_metrics_epochs_strictly_increase():
    log = MetricsLog()
    log.append(5, 1.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        log.append(5, 1.0, 1.0, 0.0)


# -------------------------------------------------------------------- fit

def test_constant_image_fit():
    data = SampleSet.from_grid(np.full((8, 8), 0.5))
    _, log = fit_signal(data, BackboneSpec(2, 1), TrainConfig(epochs=50, use_table=False))
    assert log.final_psnr > 80.0


def test_tiny_random_image_with_table():
    img = np.random.default_rng(0).random((4, 4))
    data = SampleSet.from_grid(img)
    _, log = fit_signal(data, BackboneSpec(2, 1), TrainConfig(epochs=2000, log_every=500),
                        table_init="uniform")
    assert log.final_psnr > 40.0


def test_frozen_grid_table_reproduces_baseline_bitwise():
    img = np.random.default_rng(1).random((8, 8, 3))
    data = SampleSet.from_grid(img)
    spec = BackboneSpec(2, 3, width=16)
    cfg_base = TrainConfig(epochs=30, use_table=False, log_every=1)
    cfg_tab = TrainConfig(epochs=30, use_table=True, freeze_table=True, log_every=1)
    base, log_base = fit_signal(data, spec, cfg_base)
    tab, log_tab = fit_signal(data, spec, cfg_tab, table_init="grid")
    assert np.array_equal(log_base.column("loss"), log_tab.column("loss"))
    assert all(p.tobytes() == q.tobytes()
               for p, q in zip(base.backbone.parameters(), tab.backbone.parameters()))


def test_full_batch_is_bit_reproducible():
    data = SampleSet.from_grid(np.random.default_rng(2).random((8, 8)))
    spec = BackboneSpec(2, 1, width=16, activation="sine")
    cfg = TrainConfig(epochs=40, lr_net=1e-4, log_every=10)
    a, la = fit_signal(data, spec, cfg, table_init="uniform")
    b, lb = fit_signal(data, spec, cfg, table_init="uniform")
    assert a.table.entries.tobytes() == b.table.entries.tobytes()
    assert np.array_equal(la.column("loss"), lb.column("loss"))


def test_minibatch_touches_only_batch_rows():
    data = SampleSet.from_grid(np.random.default_rng(3).random((8, 8)))
    model = build_model(BackboneSpec(2, 1, width=8), data.shape, True, "uniform", 1e-4, 0)
    fit(model, data, TrainConfig(epochs=1, batch_size=10))
    assert model.table.last_touched == 4  # 64 rows in batches of 10 leave a final batch of 4
    assert np.all(model.table.steps == 1)


def test_loss_non_increasing_windows():
    data = SampleSet.from_grid(np.random.default_rng(4).random((16, 16)))
    _, log = fit_signal(data, BackboneSpec(2, 1), TrainConfig(epochs=1000, log_every=1,
                                                               use_table=False))
    loss = log.column("loss")
    violations = np.sum(loss[100:] > loss[:-100])
    assert violations <= 0.05 * (len(loss) - 100)
    assert np.isfinite(loss[-1])


def test_metrics_rows_follow_log_every():
    data = SampleSet.from_grid(np.zeros((4, 4)))
    _, log = fit_signal(data, BackboneSpec(2, 1, width=4), TrainConfig(epochs=25, log_every=10))
    assert list(log.column("epoch")) == [0, 10, 20, 25]


def test_divergence_raises_with_epoch():
    data = SampleSet.from_grid(np.random.default_rng(0).random((4, 4)))
    model = build_model(BackboneSpec(2, 1, width=4), data.shape, False)
    model.backbone.biases[-1][:] = 1e200
    with pytest.raises(NumericError, match="epoch 0"):
        fit(model, data, TrainConfig(epochs=3, use_table=False))


def test_shape_mismatch_is_config_error():
    data = SampleSet.from_grid(np.zeros((4, 4, 3)))
    with pytest.raises(ConfigError):
        fit_signal(data, BackboneSpec(2, 1), TrainConfig(epochs=1))
    with pytest.raises(ConfigError):
        fit_signal(data, BackboneSpec(3, 3), TrainConfig(epochs=1, use_table=False))


@pytest.mark.parametrize("kw", [dict(epochs=0), dict(lr_net=0.0), dict(lr_table=-1.0),
                                dict(batch_size=-1), dict(loss="l1"), dict(log_every=0)])
def test_bad_train_config(kw):
    with pytest.raises(ConfigError):
        TrainConfig(**kw)


def test_scattered_coordinates():
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, size=(20, 2))
    y = 0.5 + 0.1 * X[:, :1]
    model = build_model(BackboneSpec(2, 1), use_table=False)
    _, log = fit(model, SampleSet((20,), y), TrainConfig(epochs=300, use_table=False), coords=X)
    assert log.final_psnr > 35
    assert np.allclose(forward(model.backbone, X), y, atol=0.02)


# ------------------------------------------------------------ invariance

def test_invariance_single_order_gap_zero():
    data = SampleSet.from_grid(np.random.default_rng(0).random((4, 4)))
    rep = invariance_report(data, BackboneSpec(2, 1, width=8), TrainConfig(epochs=20), ["identity"])
    assert rep["max_psnr_gap_db"] == 0.0 and rep["table_residual"] == 0.0


def test_invariance_small_run():
    data = SampleSet.from_grid(np.random.default_rng(5).random((8, 8, 3)))
    rep = invariance_report(data, BackboneSpec(2, 3, width=16), TrainConfig(epochs=200))
    assert rep["max_psnr_gap_db"] < 0.1
    assert rep["table_residual"] < 1e-6
    assert set(rep["psnr_db"]) == {"identity", "sorted", "random"}


def test_invariance_needs_table():
    data = SampleSet.from_grid(np.zeros((2, 2)))
    with pytest.raises(ConfigError):
        invariance_report(data, BackboneSpec(2, 1), TrainConfig(use_table=False))
