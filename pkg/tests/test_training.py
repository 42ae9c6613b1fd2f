"""Training loop tests: convergence, determinism, freezing, early stopping, divergence."""

import math

import numpy as np
import pytest

from stockcast.data import WindowSet
from stockcast.models import CatFeature, ModelSpec, build_model, transfer_pretrained
from stockcast.optim import constant, one_cycle
from stockcast.training import (
    DivergenceError,
    EarlyStopper,
    ProtocolError,
    StageConfig,
    TrainParams,
    build_plan,
    evaluate_mse,
    run_protocol,
    train_stage,
    write_log,
)


def _window_set(x, y, history_len=4):
    n = len(x)
    return WindowSet(
        series=np.array(["A"] * n),
        dates=np.array(["2020-01-01"] * n),
        cats=[],
        conts=np.asarray(x, dtype=np.float32).reshape(n, 1),
        history=np.zeros((n, 1, history_len), dtype=np.float32),
        target=np.asarray(y, dtype=np.float32).reshape(n, 1),
        padded=np.zeros(n, dtype=bool),
        raw_target=np.asarray(y, dtype=np.float64).reshape(n),
        raw_cats={},
    )


def _linear_spec():
    return ModelSpec(kind="stock2vec", cat_features=(), n_continuous=1,
                     hidden_sizes=(), hidden_dropout=())


def _linear_sets(seed=0, n=256):
    r = np.random.default_rng(seed)
    x = r.normal(size=n)
    return _window_set(x, 2.0 * x), _window_set(np.linspace(-1, 1, 32), 2.0 * np.linspace(-1, 1, 32))


# ---------------------------------------------------------------------------
# convergence and determinism


def test_linear_toy_converges_within_200_steps():
    train, valid = _linear_sets()
    model = build_model(_linear_spec(), seed=1)
    # 256 rows / batch 128 = 2 steps per epoch; 100 epochs = 200 steps
    stage = StageConfig("main", constant(0.05), epochs=100, batch_size=128)
    report = train_stage(model, stage, train, valid, seed=1)
    assert report.records[-1].train_mse < 1e-3


def test_training_is_deterministic():
    train, valid = _linear_sets()
    curves = []
    for _ in range(2):
        model = build_model(_linear_spec(), seed=3)
        stage = StageConfig("main", constant(0.01), epochs=5, batch_size=64)
        report = train_stage(model, stage, train, valid, seed=3)
        curves.append([(r.train_mse, r.valid_mse) for r in report.records])
    assert curves[0] == curves[1]


def test_epoch_lr_follows_schedule():
    train, valid = _linear_sets()
    model = build_model(_linear_spec(), seed=4)
    stage = StageConfig("main", one_cycle(1e-3, cycle_epochs=2), epochs=2, batch_size=128)
    report = train_stage(model, stage, train, valid, seed=4)
    assert abs(report.records[0].lr - 1e-3 / 25) < 1e-12


# ---------------------------------------------------------------------------
# freezing


def test_fully_frozen_stage_changes_nothing():
    train, valid = _linear_sets()
    model = build_model(_linear_spec(), seed=5)
    before_loss = evaluate_mse(model, valid)
    before = {k: v.copy() for k, v in model.state_arrays().items()}
    stage = StageConfig("frozen", constant(0.1), epochs=3, frozen_prefixes=("",))
    report = train_stage(model, stage, train, valid, seed=5)
    after = model.state_arrays()
    assert all(np.array_equal(before[k], after[k]) for k in before)
    assert report.records[-1].valid_mse == before_loss


def test_frozen_modules_are_bit_identical_through_head_stage():
    spec = ModelSpec(
        kind="tcn-stock2vec",
        cat_features=(CatFeature("s", 4),),
        n_continuous=1,
        window=4,
        hidden_sizes=(8,), hidden_dropout=(0.01,),
        tcn_blocks=2, tcn_channels=3, tcn_kernel=2, tcn_dropout=0.01,
        temporal_features=3,
    )
    donor_s2v = build_model(spec.with_kind("stock2vec"), 6)
    donor_ts = build_model(spec.with_kind("ts-tcn"), 7)
    arrays = dict(donor_s2v.state_arrays())
    arrays.update(donor_ts.state_arrays())
    hyb = build_model(spec, 8)
    transfer_pretrained(hyb, arrays)

    r = np.random.default_rng(9)
    n = 96
    ws = WindowSet(
        series=np.array(["A"] * n), dates=np.array(["2020-01-01"] * n),
        cats=[r.integers(0, 4, size=n)],
        conts=r.normal(size=(n, 1)).astype(np.float32),
        history=r.normal(size=(n, 1, 4)).astype(np.float32),
        target=r.normal(size=(n, 1)).astype(np.float32),
        padded=np.zeros(n, dtype=bool),
        raw_target=r.normal(size=n), raw_cats={},
    )
    frozen_before = {
        k: v.copy() for k, v in hyb.state_arrays().items()
        if k.startswith(hyb.pretrained_prefixes())
    }
    stage = StageConfig("head", one_cycle(3e-4, cycle_epochs=2), epochs=4, batch_size=32,
                        frozen_prefixes=hyb.pretrained_prefixes())
    train_stage(hyb, stage, ws, ws, seed=10)
    frozen_after = {
        k: v for k, v in hyb.state_arrays().items() if k.startswith(hyb.pretrained_prefixes())
    }
    # parameters AND batch-norm buffers must be untouched
    assert set(frozen_before) == set(frozen_after)
    for k in frozen_before:
        np.testing.assert_array_equal(frozen_before[k], frozen_after[k])


# ---------------------------------------------------------------------------
# early stopping


def test_early_stopper_monotone_improvement_never_stops():
    es = EarlyStopper(patience=3)
    for loss in (1.0, 0.9, 0.8):
        assert not es.update(loss, {"w": np.array([loss])})
    assert es.best == 0.8
    assert es.best_arrays["w"][0] == 0.8


def test_early_stopper_patience_trace():
    es = EarlyStopper(patience=3)
    assert not es.update(0.5, {"w": np.array([0.5])})
    assert not es.update(0.6, {})
    assert not es.update(0.6, {})
    assert es.update(0.6, {})  # third consecutive non-improvement
    assert es.best == 0.5
    assert es.best_arrays["w"][0] == 0.5


def test_early_stopper_threshold_counts_tiny_gains_as_noise():
    es = EarlyStopper(patience=1)
    assert not es.update(0.5, {})
    assert es.update(0.49999999, {})  # improvement below 1e-6
    assert es.best == 0.5


def test_early_stopping_restores_minimum_validation_checkpoint():
    train, valid = _linear_sets()
    model = build_model(_linear_spec(), seed=11)
    # a large constant lr makes validation bounce, triggering the stopper
    stage = StageConfig("main", constant(0.9), epochs=50, batch_size=32,
                        early_stop_patience=2)
    report = train_stage(model, stage, train, valid, seed=11)
    observed = [r.valid_mse for r in report.records]
    assert report.best_valid == min(observed)
    final = evaluate_mse(model, valid)
    assert final <= min(observed) + 1e-12


# ---------------------------------------------------------------------------
# divergence and guards


def test_divergence_aborts_with_diagnostics():
    train, valid = _linear_sets()
    model = build_model(_linear_spec(), seed=12)
    stage = StageConfig("main", constant(1e12), epochs=10, batch_size=128, optimizer="sgd",
                        grad_clip=1e30)
    with pytest.raises(DivergenceError, match="stage 'main'"):
        train_stage(model, stage, train, valid, seed=12)


def test_gradient_clip_limits_update_size():
    train, valid = _linear_sets()
    deltas = []
    for clip in (1e-6, 1e6):
        model = build_model(_linear_spec(), seed=13)
        w0 = model.head.out.weight.data.copy()
        stage = StageConfig("main", constant(0.1), epochs=1, batch_size=256,
                            optimizer="sgd", grad_clip=clip)
        train_stage(model, stage, train, valid, seed=13)
        deltas.append(float(np.abs(model.head.out.weight.data - w0).max()))
    assert deltas[0] < deltas[1] * 1e-3


def test_unknown_optimizer_is_a_protocol_error():
    train, valid = _linear_sets()
    model = build_model(_linear_spec(), seed=14)
    with pytest.raises(ProtocolError, match="optimizer"):
        train_stage(model, StageConfig("m", constant(0.1), 1, optimizer="rmsprop"),
                    train, valid, seed=0)


# ---------------------------------------------------------------------------
# protocol plans


def test_stage_plans_by_architecture():
    params = TrainParams()
    s2v = build_plan(ModelSpec(kind="stock2vec", n_continuous=1), params)
    assert len(s2v) == 1
    assert s2v[0].schedule.kind == "one_cycle"
    assert s2v[0].schedule.max_lr == 1e-3
    assert s2v[0].schedule.cycle_epochs == 3

    ts = build_plan(ModelSpec(kind="ts-tcn"), params)
    assert len(ts) == 1
    assert ts[0].schedule.kind == "constant" and ts[0].schedule.max_lr == 1e-4

    hyb = build_plan(ModelSpec(kind="tcn-stock2vec", n_continuous=1), params,
                     frozen_prefixes=("encoder.", "temporal.core."))
    assert [s.name for s in hyb] == ["head", "finetune"]
    assert hyb[0].schedule.max_lr == 3e-4 and hyb[0].schedule.cycle_epochs == 2
    assert hyb[0].epochs == 4 and hyb[0].frozen_prefixes == ("encoder.", "temporal.core.")
    assert hyb[1].schedule.max_lr == 1e-5 and hyb[1].epochs == 10
    assert hyb[1].early_stop_patience == 3
    assert all(s.batch_size == 128 for s in s2v + ts + hyb)


def test_hybrid_protocol_requires_pretrained_arrays():
    train, valid = _linear_sets()
    spec = ModelSpec(kind="tcn-stock2vec", n_continuous=1, window=4,
                     hidden_sizes=(4,), hidden_dropout=(0.0,),
                     tcn_blocks=1, tcn_channels=2, temporal_features=2)
    with pytest.raises(ProtocolError, match="pretrained"):
        run_protocol(spec, train, valid, seed=0)


def test_run_protocol_reports_stage_structure():
    train, valid = _linear_sets()
    model, report = run_protocol(
        _linear_spec(), train, valid, seed=15,
        params=TrainParams(s2v_cycles=1, s2v_cycle_epochs=2, batch_size=64),
    )
    assert [s.name for s in report.stages] == ["main"]
    assert len(report.records) == 2
    assert report.best_valid == min(r.valid_mse for r in report.records)


# ---------------------------------------------------------------------------
# log format


def test_write_log_round_trips(tmp_path):
    train, valid = _linear_sets()
    model = build_model(_linear_spec(), seed=16)
    report = train_stage(model, StageConfig("main", constant(0.01), 3, batch_size=64),
                         train, valid, seed=16)
    path = tmp_path / "log.csv"
    write_log(report.records, path)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "epoch,stage,lr,train_mse,valid_mse,wall_seconds"
    assert len(lines) == 4
    for line, rec in zip(lines[1:], report.records):
        fields = line.split(",")
        assert int(fields[0]) == rec.epoch and fields[1] == "main"
        assert float(fields[2]) == rec.lr
        assert float(fields[3]) == rec.train_mse
        assert float(fields[4]) == rec.valid_mse
        assert math.isfinite(float(fields[5]))
