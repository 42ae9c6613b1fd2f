"""The five forecasting architectures and their serializable specification.

Parameter counts (F = sum of embedding dims + n_continuous, M = temporal
feature width):
  stock2vec:       sum_c |C_c|*D_c  +  head(F)
  ts-tcn:          tcn core          +  1x1 conv head to width 1
  ts-lstm:         lstm cells        +  dense projection to width 1
  tcn-stock2vec:   embeddings + tcn core + 1x1 conv to M + head(F + M)
  lstm-stock2vec:  embeddings + lstm cells + dense to M + head(F + M)
where head(n) = n*1024 + 1024 + 1024*512 + 512 + 512*1 + 1 at the default
hidden sizes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace

import numpy as np

from . import tensor as F
from .layers import TCN, Dense, Dropout, Embedding, Module, StackedLSTM, embedding_dim
from .seeding import sub_rng
from .tensor import ContractError, Tensor

MODEL_KINDS = ("ts-tcn", "ts-lstm", "stock2vec", "tcn-stock2vec", "lstm-stock2vec")
TEMPORAL_KINDS = ("ts-tcn", "ts-lstm", "tcn-stock2vec", "lstm-stock2vec")
TABULAR_KINDS = ("stock2vec", "tcn-stock2vec", "lstm-stock2vec")


class SchemaError(ValueError):
    """Inputs do not match the declared feature schema."""


class WindowError(ValueError):
    """History windows are missing or too short."""


@dataclass(frozen=True)
class CatFeature:
    """A categorical column; cardinality counts the reserved unknown slot."""

    name: str
    cardinality: int

    @property
    def dim(self) -> int:
        return embedding_dim(self.cardinality)


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    cat_features: tuple[CatFeature, ...] = ()
    n_continuous: int = 0
    window: int = 260
    hidden_sizes: tuple[int, ...] = (1024, 512)
    hidden_dropout: tuple[float, ...] = (0.001, 0.01)
    tcn_blocks: int = 8
    tcn_channels: int = 16
    tcn_kernel: int = 2
    tcn_dropout: float = 0.01
    lstm_layers: int = 2
    lstm_hidden: int = 50
    temporal_features: int = 30

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise SchemaError(f"unknown model kind {self.kind!r}; expected one of {MODEL_KINDS}")
        if len(self.hidden_sizes) != len(self.hidden_dropout):
            raise SchemaError(
                f"hidden_sizes and hidden_dropout lengths differ: "
                f"{len(self.hidden_sizes)} vs {len(self.hidden_dropout)}"
            )
        if self.kind in TEMPORAL_KINDS and self.window < 1:
            raise SchemaError(f"window must be >= 1 for {self.kind}, got {self.window}")
        if self.kind in TABULAR_KINDS and not self.cat_features and self.n_continuous == 0:
            raise SchemaError(f"{self.kind} needs at least one categorical or continuous feature")
        names = [f.name for f in self.cat_features]
        if len(names) != len(set(names)):
            raise SchemaError(f"duplicate categorical feature names: {names}")

    @property
    def feature_width(self) -> int:
        return sum(f.dim for f in self.cat_features) + self.n_continuous

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "cat_features": [[f.name, f.cardinality] for f in self.cat_features],
            "n_continuous": self.n_continuous,
            "window": self.window,
            "hidden_sizes": list(self.hidden_sizes),
            "hidden_dropout": list(self.hidden_dropout),
            "tcn_blocks": self.tcn_blocks,
            "tcn_channels": self.tcn_channels,
            "tcn_kernel": self.tcn_kernel,
            "tcn_dropout": self.tcn_dropout,
            "lstm_layers": self.lstm_layers,
            "lstm_hidden": self.lstm_hidden,
            "temporal_features": self.temporal_features,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        d["cat_features"] = tuple(CatFeature(n, c) for n, c in d.get("cat_features", ()))
        d["hidden_sizes"] = tuple(d.get("hidden_sizes", (1024, 512)))
        d["hidden_dropout"] = tuple(d.get("hidden_dropout", (0.001, 0.01)))
        return cls(**d)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def spec_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()

    def with_kind(self, kind: str) -> "ModelSpec":
        return replace(self, kind=kind)


class FeatureEncoder(Module):
    """Embeds categorical indices and concatenates them with continuous inputs."""

    def __init__(self, cat_features: tuple[CatFeature, ...], n_continuous: int,
                 rng: np.random.Generator):
        super().__init__()
        self.cat_features = cat_features
        self.n_continuous = n_continuous
        self.embs: list[Embedding] = [
            self.child(f"emb_{f.name}", Embedding(f.name, f.cardinality, f.dim, rng))
            for f in cat_features
        ]
        self.out_width = sum(f.dim for f in cat_features) + n_continuous

    def forward(self, cats, conts) -> Tensor:
        cats = [] if cats is None else list(cats)
        if len(cats) != len(self.cat_features):
            raise SchemaError(
                f"expected {len(self.cat_features)} categorical columns, got {len(cats)}"
            )
        parts = [emb.forward(idx) for emb, idx in zip(self.embs, cats)]
        if self.n_continuous:
            if conts is None:
                raise SchemaError(f"expected {self.n_continuous} continuous columns, got none")
            ct = conts if isinstance(conts, Tensor) else Tensor(np.asarray(conts))
            if ct.data.ndim != 2 or ct.shape[1] != self.n_continuous:
                raise SchemaError(
                    f"continuous block must be (batch, {self.n_continuous}), got {ct.shape}"
                )
            parts.append(ct)
        if not parts:
            raise SchemaError("no input features")
        return parts[0] if len(parts) == 1 else F.concat(parts, axis=1)


class DenseHead(Module):
    """Fully-connected stack: dense+ReLU+dropout per hidden size, then dense to 1."""

    def __init__(self, in_width: int, sizes, dropouts, rng: np.random.Generator):
        super().__init__()
        self.fcs: list[Dense] = []
        self.drops: list[Dropout] = []
        prev = in_width
        for i, (size, p) in enumerate(zip(sizes, dropouts)):
            self.fcs.append(self.child(f"fc{i}", Dense(prev, size, rng)))
            self.drops.append(self.child(f"drop{i}", Dropout(p, rng)))
            prev = size
        self.out = self.child("out", Dense(prev, 1, rng))

    def forward(self, x: Tensor) -> Tensor:
        for fc, drop in zip(self.fcs, self.drops):
            x = drop.forward(F.relu(fc.forward(x)))
        return self.out.forward(x)


def _check_history(history) -> Tensor:
    if history is None:
        raise WindowError("model requires a history window, got none")
    h = history if isinstance(history, Tensor) else Tensor(np.asarray(history))
    if h.data.ndim != 3:
        raise WindowError(f"history must be (batch, channels, time), got shape {h.shape}")
    if h.shape[2] < 1:
        raise WindowError("history window must cover at least one step")
    return h


class TemporalNet(Module):
    """Univariate forecaster: TCN or stacked LSTM over the target's own history."""

    def __init__(self, spec: ModelSpec, rng: np.random.Generator):
        super().__init__()
        self.spec = spec
        if spec.kind == "ts-tcn":
            temporal = TCN(1, spec.tcn_channels, spec.tcn_blocks, spec.tcn_kernel,
                           spec.tcn_dropout, 1, rng)
        elif spec.kind == "ts-lstm":
            temporal = StackedLSTM(1, spec.lstm_hidden, spec.lstm_layers, 1, rng)
        else:
            raise SchemaError(f"not a temporal-only kind: {spec.kind}")
        self.temporal = self.child("temporal", temporal)

    def forward(self, history) -> Tensor:
        return self.temporal.forward(_check_history(history))

    def predict(self, cats, conts, history) -> Tensor:
        return self.forward(history)


class Stock2VecNet(Module):
    """Entity-embedding regressor over one day's categorical + continuous features."""

    def __init__(self, spec: ModelSpec, rng: np.random.Generator):
        super().__init__()
        self.spec = spec
        self.encoder = self.child("encoder", FeatureEncoder(spec.cat_features, spec.n_continuous, rng))
        self.head = self.child(
            "head", DenseHead(self.encoder.out_width, spec.hidden_sizes, spec.hidden_dropout, rng)
        )

    def forward(self, cats, conts) -> Tensor:
        return self.head.forward(self.encoder.forward(cats, conts))

    def predict(self, cats, conts, history) -> Tensor:
        return self.forward(cats, conts)


class HybridNet(Module):
    """Entity embeddings fused with a temporal feature map, joined by head layers.

    The temporal module compresses the history window into `temporal_features`
    values that are concatenated with the encoder output before the head. The
    encoder and the temporal core are the transferable (freezable) modules; the
    temporal projection and head always start fresh.
    """

    def __init__(self, spec: ModelSpec, rng: np.random.Generator):
        super().__init__()
        self.spec = spec
        self.encoder = self.child("encoder", FeatureEncoder(spec.cat_features, spec.n_continuous, rng))
        if spec.kind == "tcn-stock2vec":
            temporal = TCN(1, spec.tcn_channels, spec.tcn_blocks, spec.tcn_kernel,
                           spec.tcn_dropout, spec.temporal_features, rng)
        elif spec.kind == "lstm-stock2vec":
            temporal = StackedLSTM(1, spec.lstm_hidden, spec.lstm_layers,
                                   spec.temporal_features, rng)
        else:
            raise SchemaError(f"not a hybrid kind: {spec.kind}")
        self.temporal = self.child("temporal", temporal)
        self.head = self.child(
            "head",
            DenseHead(self.encoder.out_width + spec.temporal_features,
                      spec.hidden_sizes, spec.hidden_dropout, rng),
        )

    def forward(self, cats, conts, history) -> Tensor:
        feats = self.encoder.forward(cats, conts)
        fmap = self.temporal.forward(_check_history(history))
        return self.head.forward(F.concat([feats, fmap], axis=1))

    def predict(self, cats, conts, history) -> Tensor:
        return self.forward(cats, conts, history)

    def pretrained_prefixes(self) -> tuple[str, ...]:
        """Name prefixes of the modules that transfer learning loads and freezes."""
        return ("encoder.", "temporal.core.")

    def frozen_modules(self) -> list[Module]:
        return [self.encoder, self.temporal.core]


def build_model(spec: ModelSpec, seed: int) -> Module:
    """Construct a seeded model; dropout streams are fanned out per layer path."""
    rng = sub_rng(seed, "init")
    if spec.kind in ("ts-tcn", "ts-lstm"):
        net = TemporalNet(spec, rng)
    elif spec.kind == "stock2vec":
        net = Stock2VecNet(spec, rng)
    else:
        net = HybridNet(spec, rng)
    for path, m in net.named_modules():
        if isinstance(m, Dropout):
            m.rng = sub_rng(seed, "dropout/" + path)
    return net


def transfer_pretrained(hybrid: HybridNet, source_arrays: dict[str, np.ndarray]):
    """Copy pretrained values into the hybrid's transferable modules by name.

    `source_arrays` is the union of the donor checkpoints' state arrays (the
    tabular net contributes `encoder.*`, the temporal net `temporal.core.*`).
    Only names under the pretrained prefixes transfer; the temporal projection
    and head keep their fresh initialization.
    """
    prefixes = hybrid.pretrained_prefixes()
    wanted = {n for n, _ in hybrid.named_parameters() if n.startswith(prefixes)}
    wanted |= {n for n, _ in hybrid.named_buffers() if n.startswith(prefixes)}
    missing = sorted(n for n in wanted if n not in source_arrays)
    if missing:
        raise ContractError(f"pretrained checkpoints missing arrays: {missing[:5]}")
    params = dict(hybrid.named_parameters())
    for name in wanted:
        if name in params:
            t = params[name]
            if t.shape != source_arrays[name].shape:
                raise ContractError(
                    f"pretrained array {name} has shape {source_arrays[name].shape}, "
                    f"expected {t.shape}"
                )
            # always copy: the receiver must own its memory, or later
            # fine-tuning would mutate the donor's arrays in place
            t.data = np.ascontiguousarray(source_arrays[name]).astype(t.dtype, copy=True)
    _copy_buffers(hybrid, source_arrays, prefixes, "")


def _copy_buffers(module: Module, arrays: dict, prefixes: tuple[str, ...], prefix: str):
    for name in module._buffers:
        full = prefix + name
        if full.startswith(prefixes):
            module._buffers[name] = np.ascontiguousarray(
                arrays[full]).astype(module._buffers[name].dtype, copy=True)
    for cname, c in module._children.items():
        _copy_buffers(c, arrays, prefixes, prefix + cname + ".")
