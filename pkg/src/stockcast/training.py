"""Staged training: minibatch loop, freezing, early stopping, the transfer protocol.

Stage plans by architecture:
  ts-tcn / ts-lstm   one stage, Adam at a constant 1e-4
  stock2vec          one stage, one-cycle with max 1e-3 over 3-epoch cycles
  hybrids            stage 1 trains the fresh parts (temporal projection +
                     head) for 2 cycles x 2 epochs at max 3e-4 with the
                     transferred modules frozen in eval mode; stage 2
                     fine-tunes everything for 10 epochs at 1e-5 with early
                     stopping (patience 3, improvement threshold 1e-6)
Every stage tracks the minimum-validation parameter snapshot; stages with
early stopping restore it at stage end.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as F
from .data import DataError, WindowSet
from .layers import Module
from .models import HybridNet, ModelSpec, build_model, transfer_pretrained
from .optim import SGD, Adam, LRSchedule, clip_grad_norm, constant, lr_at, one_cycle
from .seeding import sub_rng
from .tensor import NumericError, Tensor


class ProtocolError(RuntimeError):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, message: str, best_arrays: Optional[dict] = None):
        super().__init__(message)
        self.best_arrays = best_arrays


@dataclass(frozen=True)
class StageConfig:
    name: str
    schedule: LRSchedule
    epochs: int
    optimizer: str = "adam"
    batch_size: int = 128
    frozen_prefixes: tuple[str, ...] = ()
    early_stop_patience: Optional[int] = None
    grad_clip: float = 10.0


@dataclass(frozen=True)
class TrainParams:
    """Protocol hyperparameters; defaults follow the reference configuration."""

    batch_size: int = 128
    ts_lr: float = 1e-4
    ts_epochs: int = 10
    s2v_max_lr: float = 1e-3
    s2v_cycle_epochs: int = 3
    s2v_cycles: int = 2
    head_max_lr: float = 3e-4
    head_cycle_epochs: int = 2
    head_cycles: int = 2
    finetune_lr: float = 1e-5
    finetune_epochs: int = 10
    patience: int = 3
    grad_clip: float = 10.0


@dataclass
class EpochRecord:
    epoch: int
    stage: str
    lr: float
    train_mse: float
    valid_mse: float
    wall_seconds: float


@dataclass
class StageReport:
    name: str
    records: list[EpochRecord]
    best_valid: float
    stopped_early: bool = False


@dataclass
class ProtocolReport:
    stages: list[StageReport]
    best_valid: float

    @property
    def records(self) -> list[EpochRecord]:
        return [r for s in self.stages for r in s.records]


class EarlyStopper:
    """Stops after `patience` consecutive evaluations that fail to improve by > threshold."""

    def __init__(self, patience: int, threshold: float = 1e-6):
        self.patience = patience
        self.threshold = threshold
        self.best = math.inf
        self.bad = 0
        self.best_arrays: Optional[dict[str, np.ndarray]] = None

    def update(self, loss: float, arrays: dict[str, np.ndarray]) -> bool:
        if self.best - loss > self.threshold:
            self.best = loss
            self.bad = 0
            self.best_arrays = {k: v.copy() for k, v in arrays.items()}
        else:
            self.bad += 1
        return self.bad >= self.patience


def _snapshot(model: Module) -> dict[str, np.ndarray]:
    return {k: v.copy() for k, v in model.state_arrays().items()}


def _apply_modes(model: Module, frozen_prefixes):
    """Training mode everywhere except the frozen subtrees, which stay in eval."""
    model.train()
    roots = tuple(p.rstrip(".") for p in frozen_prefixes)
    for path, m in model.named_modules():
        if path and path in roots:
            m.eval()


def evaluate_mse(model: Module, ws: WindowSet, batch_size: int = 1024) -> float:
    """Mean squared error over a window set, eval mode, in scaled target units."""
    model.eval()
    total, n = 0.0, len(ws)
    for lo in range(0, n, batch_size):
        cats, conts, hist, tgt = ws.take(np.arange(lo, min(lo + batch_size, n)))
        pred = model.predict(cats, conts, hist)
        total += float(np.sum((pred.data.astype(np.float64) - tgt) ** 2))
    return total / n


def predict_all(model: Module, ws: WindowSet, batch_size: int = 1024) -> np.ndarray:
    """Predictions for a whole window set, eval mode, scaled target units, shape (N, 1)."""
    model.eval()
    outs = []
    for lo in range(0, len(ws), batch_size):
        cats, conts, hist, _ = ws.take(np.arange(lo, min(lo + batch_size, len(ws))))
        outs.append(model.predict(cats, conts, hist).data.copy())
    return np.concatenate(outs, axis=0)


def train_stage(model: Module, stage: StageConfig, train_ws: WindowSet, valid_ws: WindowSet,
                seed: int) -> StageReport:
    if len(train_ws) == 0 or len(valid_ws) == 0:
        raise DataError("train and validation sets must be non-empty")
    trainable = [
        (n, p) for n, p in model.named_parameters() if not n.startswith(stage.frozen_prefixes)
    ]
    if not trainable:
        # nothing to optimize; still report the validation loss
        v = evaluate_mse(model, valid_ws)
        return StageReport(stage.name, [EpochRecord(1, stage.name, 0.0, math.nan, v, 0.0)], v)

    if stage.optimizer == "adam":
        opt = Adam(trainable, lr=stage.schedule.max_lr)
    elif stage.optimizer == "sgd":
        opt = SGD(trainable, lr=stage.schedule.max_lr)
    else:
        raise ProtocolError(f"unknown optimizer {stage.optimizer!r}")

    shuffle_rng = sub_rng(seed, f"shuffle/{stage.name}")
    n = len(train_ws)
    steps_per_epoch = max(1, math.ceil(n / stage.batch_size))
    stopper = EarlyStopper(stage.early_stop_patience or 0)
    best_valid = math.inf
    best_arrays = None
    records = []
    stopped = False
    global_step = 0

    for epoch in range(1, stage.epochs + 1):
        t0 = time.perf_counter()
        _apply_modes(model, stage.frozen_prefixes)
        perm = shuffle_rng.permutation(n)
        epoch_lr = lr_at(stage.schedule, global_step, steps_per_epoch)
        sq_sum = 0.0
        for lo in range(0, n, stage.batch_size):
            idx = perm[lo : lo + stage.batch_size]
            cats, conts, hist, tgt = train_ws.take(idx)
            opt.lr = lr_at(stage.schedule, global_step, steps_per_epoch)
            with F.Tape() as tape:
                pred = model.predict(cats, conts, hist)
                loss = F.mse_loss(pred, Tensor(tgt))
            lval = loss.item()
            if not math.isfinite(lval):
                raise DivergenceError(
                    f"training loss became {lval} in stage {stage.name!r}, epoch {epoch}, "
                    f"step {global_step}", best_arrays,
                )
            F.backward(loss, tape)
            try:
                clip_grad_norm(trainable, stage.grad_clip)
                opt.step()
            except NumericError as exc:
                raise DivergenceError(
                    f"stage {stage.name!r}, epoch {epoch}: {exc}", best_arrays
                ) from exc
            model.zero_grad()
            sq_sum += lval * len(idx)
            global_step += 1

        train_mse = sq_sum / n
        valid_mse = evaluate_mse(model, valid_ws)
        records.append(EpochRecord(epoch, stage.name, epoch_lr, train_mse, valid_mse,
                                   time.perf_counter() - t0))
        if valid_mse < best_valid:
            best_valid = valid_mse
            best_arrays = _snapshot(model)
        if stage.early_stop_patience and stopper.update(valid_mse, model.state_arrays()):
            stopped = True
            break

    if stage.early_stop_patience and best_arrays is not None:
        model.load_state_arrays(best_arrays)
    model.eval()
    return StageReport(stage.name, records, best_valid, stopped)


def build_plan(spec: ModelSpec, params: TrainParams,
               frozen_prefixes: tuple[str, ...] = ()) -> list[StageConfig]:
    p = params
    if spec.kind in ("ts-tcn", "ts-lstm"):
        return [StageConfig("main", constant(p.ts_lr), p.ts_epochs,
                            batch_size=p.batch_size, grad_clip=p.grad_clip)]
    if spec.kind == "stock2vec":
        return [StageConfig(
            "main", one_cycle(p.s2v_max_lr, cycle_epochs=p.s2v_cycle_epochs),
            p.s2v_cycle_epochs * p.s2v_cycles, batch_size=p.batch_size, grad_clip=p.grad_clip,
        )]
    return [
        StageConfig(
            "head", one_cycle(p.head_max_lr, cycle_epochs=p.head_cycle_epochs),
            p.head_cycle_epochs * p.head_cycles, batch_size=p.batch_size,
            frozen_prefixes=frozen_prefixes, grad_clip=p.grad_clip,
        ),
        StageConfig(
            "finetune", constant(p.finetune_lr), p.finetune_epochs,
            batch_size=p.batch_size, early_stop_patience=p.patience, grad_clip=p.grad_clip,
        ),
    ]


def run_protocol(spec: ModelSpec, train_ws: WindowSet, valid_ws: WindowSet, seed: int,
                 params: TrainParams = TrainParams(),
                 pretrained: Optional[dict[str, np.ndarray]] = None):
    """Build, (for hybrids) transfer + freeze, and train a model per its stage plan.

    Returns (model, ProtocolReport). Hybrid kinds require `pretrained`: the
    union of the donor tabular and temporal checkpoints' arrays.
    """
    model = build_model(spec, seed)
    frozen: tuple[str, ...] = ()
    if isinstance(model, HybridNet):
        if pretrained is None:
            raise ProtocolError(
                f"{spec.kind} needs pretrained stock2vec and {spec.kind.split('-')[0]} "
                "checkpoints; train them first or pass --pretrain-auto"
            )
        transfer_pretrained(model, pretrained)
        frozen = model.pretrained_prefixes()
    reports = []
    for stage in build_plan(spec, params, frozen):
        reports.append(train_stage(model, stage, train_ws, valid_ws, seed))
    return model, ProtocolReport(reports, min(r.best_valid for r in reports))


def write_log(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,stage,lr,train_mse,valid_mse,wall_seconds\n")
        for r in records:
            fh.write(f"{r.epoch},{r.stage},{r.lr!r},{r.train_mse!r},{r.valid_mse!r},"
                     f"{r.wall_seconds!r}\n")
