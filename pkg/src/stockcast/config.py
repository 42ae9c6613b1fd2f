"""Run configuration: one JSON file drives every command.

The file is a flat key-value object. Unknown keys are rejected so typos fail
loudly. `dump_effective_config` writes the fully resolved configuration with a
`_doc` block annotating every field and its default, and that dump can be fed
back as a config file to reproduce the run.
"""

import dataclasses
import json
from dataclasses import dataclass
from typing import Optional, Tuple

from .data import DataError, _parse_iso_date
from .models import MODEL_KINDS, TABULAR_KINDS, CatFeature, ModelSpec
from .training import TrainParams


class ConfigError(ValueError):
    """Raised for malformed or inconsistent run configurations."""


@dataclass(frozen=True)
class RunConfig:
    # data
    csv: Optional[str] = None
    cat_cols: Tuple[str, ...] = ("symbol", "group", "day_of_week", "month")
    cont_cols: Tuple[str, ...] = ("lag1", "ma5", "ma20")
    valid_start: Optional[str] = None
    test_start: Optional[str] = None
    group_col: str = "group"
    # model
    kind: str = "stock2vec"
    window: int = 260
    hidden_sizes: Tuple[int, ...] = (1024, 512)
    hidden_dropout: Tuple[float, ...] = (0.001, 0.01)
    tcn_blocks: int = 8
    tcn_channels: int = 16
    tcn_kernel: int = 2
    tcn_dropout: float = 0.01
    lstm_layers: int = 2
    lstm_hidden: int = 50
    temporal_features: int = 30
    # training
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
    # transfer sources for hybrid kinds
    pretrained_stock2vec: Optional[str] = None
    pretrained_temporal: Optional[str] = None
    # run
    seed: int = 0
    out_dir: str = "runs"

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}; "
                              f"expected one of {', '.join(MODEL_KINDS)}")
        if len(self.hidden_sizes) != len(self.hidden_dropout):
            raise ConfigError(
                f"hidden_sizes has {len(self.hidden_sizes)} entries but "
                f"hidden_dropout has {len(self.hidden_dropout)}")
        for name in ("window", "tcn_blocks", "tcn_channels", "tcn_kernel",
                     "lstm_layers", "lstm_hidden", "temporal_features", "batch_size",
                     "ts_epochs", "s2v_cycle_epochs", "s2v_cycles", "head_cycle_epochs",
                     "head_cycles", "finetune_epochs", "patience"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("ts_lr", "s2v_max_lr", "head_max_lr", "finetune_lr", "grad_clip"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        for name in ("valid_start", "test_start"):
            value = getattr(self, name)
            if value is not None:
                try:
                    _parse_iso_date(value, 0)
                except DataError:
                    raise ConfigError(f"{name} must be an ISO date, got {value!r}") from None


_TUPLE_FIELDS = {"cat_cols", "cont_cols", "hidden_sizes", "hidden_dropout"}

# One line per field: what it controls and where its default comes from. The
# dump carries these so every resolved value is traceable.
FIELD_DOCS = {
    "csv": "input table: date,series_id,<categoricals>,<continuous>,target",
    "cat_cols": "categorical feature columns, each mapped to a learned embedding",
    "cont_cols": "continuous feature columns, standardized on the training split",
    "valid_start": "first date of the validation split (inclusive)",
    "test_start": "first date of the test split (inclusive)",
    "group_col": "categorical column used for per-group metric breakdowns",
    "kind": "architecture: ts-tcn | ts-lstm | stock2vec | tcn-stock2vec | lstm-stock2vec",
    "window": "history length fed to the temporal module (default 260 trading days)",
    "hidden_sizes": "dense head layer widths (reference setting: 1024 then 512)",
    "hidden_dropout": "dropout per head layer (reference setting: 0.001 then 0.01)",
    "tcn_blocks": "residual blocks; dilation doubles per block (8 blocks span 1..128)",
    "tcn_channels": "convolution channels per block (reference setting: 16)",
    "tcn_kernel": "convolution kernel size (reference setting: 2)",
    "tcn_dropout": "dropout inside each residual block (reference setting: 0.01)",
    "lstm_layers": "stacked LSTM layers (reference setting: 2)",
    "lstm_hidden": "LSTM hidden units per layer (reference setting: 50)",
    "temporal_features": "width of the temporal feature map fused into hybrids (30)",
    "batch_size": "minibatch size for every stage (reference setting: 128)",
    "ts_lr": "constant learning rate for standalone temporal models (1e-4)",
    "ts_epochs": "epochs for standalone temporal models",
    "s2v_max_lr": "one-cycle peak learning rate for the embedding model (1e-3)",
    "s2v_cycle_epochs": "epochs per one-cycle run for the embedding model (3)",
    "s2v_cycles": "number of one-cycle runs for the embedding model",
    "head_max_lr": "one-cycle peak learning rate for the frozen-trunk head stage (3e-4)",
    "head_cycle_epochs": "epochs per one-cycle run in the head stage (2)",
    "head_cycles": "number of one-cycle runs in the head stage",
    "finetune_lr": "constant learning rate for end-to-end fine-tuning (1e-5)",
    "finetune_epochs": "maximum fine-tuning epochs (early stopping may end sooner)",
    "patience": "fine-tuning early-stop patience in epochs (3)",
    "grad_clip": "global gradient-norm clip applied every step (10.0)",
    "pretrained_stock2vec": "checkpoint supplying embeddings for hybrid transfer",
    "pretrained_temporal": "checkpoint supplying the temporal core for hybrid transfer",
    "seed": "root seed; all randomness fans out from labeled sub-streams of it",
    "out_dir": "directory receiving checkpoints, logs and reports",
}


def config_from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be an object, got {type(raw).__name__}")
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(raw) - known - {"_doc"})
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    kwargs = {}
    for f in dataclasses.fields(RunConfig):
        if f.name not in raw:
            continue
        value = raw[f.name]
        if f.name in _TUPLE_FIELDS:
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{f.name} must be a list, got {value!r}")
            value = tuple(value)
        kwargs[f.name] = value
    try:
        return RunConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return config_from_dict(raw)


def apply_overrides(cfg: RunConfig, *, kind=None, seed=None, out_dir=None) -> RunConfig:
    updates = {}
    if kind is not None:
        updates["kind"] = kind
    if seed is not None:
        updates["seed"] = seed
    if out_dir is not None:
        updates["out_dir"] = out_dir
    if not updates:
        return cfg
    try:
        return dataclasses.replace(cfg, **updates)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def effective_config_json(cfg: RunConfig) -> str:
    body = {}
    for f in dataclasses.fields(RunConfig):
        value = getattr(cfg, f.name)
        body[f.name] = list(value) if isinstance(value, tuple) else value
    body["_doc"] = {name: FIELD_DOCS[name] for name in sorted(FIELD_DOCS)}
    return json.dumps(body, indent=2, sort_keys=True) + "\n"


def to_model_spec(cfg: RunConfig, vocabs) -> ModelSpec:
    """Bind the configuration to a concrete model using fitted vocabularies."""
    if cfg.kind not in TABULAR_KINDS:
        cat_features: Tuple[CatFeature, ...] = ()
        n_continuous = 0
    else:
        missing = [c for c in cfg.cat_cols if c not in vocabs]
        if missing:
            raise ConfigError(f"no vocabulary fitted for columns: {', '.join(missing)}")
        cat_features = tuple(CatFeature(c, vocabs[c].cardinality) for c in cfg.cat_cols)
        n_continuous = len(cfg.cont_cols)
    return ModelSpec(
        kind=cfg.kind,
        cat_features=cat_features,
        n_continuous=n_continuous,
        window=cfg.window,
        hidden_sizes=cfg.hidden_sizes,
        hidden_dropout=cfg.hidden_dropout,
        tcn_blocks=cfg.tcn_blocks,
        tcn_channels=cfg.tcn_channels,
        tcn_kernel=cfg.tcn_kernel,
        tcn_dropout=cfg.tcn_dropout,
        lstm_layers=cfg.lstm_layers,
        lstm_hidden=cfg.lstm_hidden,
        temporal_features=cfg.temporal_features,
    )


def to_train_params(cfg: RunConfig) -> TrainParams:
    return TrainParams(
        batch_size=cfg.batch_size,
        ts_lr=cfg.ts_lr,
        ts_epochs=cfg.ts_epochs,
        s2v_max_lr=cfg.s2v_max_lr,
        s2v_cycle_epochs=cfg.s2v_cycle_epochs,
        s2v_cycles=cfg.s2v_cycles,
        head_max_lr=cfg.head_max_lr,
        head_cycle_epochs=cfg.head_cycle_epochs,
        head_cycles=cfg.head_cycles,
        finetune_lr=cfg.finetune_lr,
        finetune_epochs=cfg.finetune_epochs,
        patience=cfg.patience,
        grad_clip=cfg.grad_clip,
    )
