"""Command-line entry point.

Subcommands: gen-synthetic, train, evaluate, predict, analyze-embeddings.
Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""

import argparse
import os
import sys

import numpy as np

from .analysis import (
    AnalysisError,
    EmbeddingLookupError,
    all_neighbor_rows,
    export_report,
    extract_embeddings,
    format_neighbors,
    nearest_neighbors,
    pca,
)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import (
    ConfigError,
    RunConfig,
    apply_overrides,
    effective_config_json,
    load_config,
    to_model_spec,
    to_train_params,
)
from .data import (
    DataError,
    Scaler,
    Schema,
    SplitError,
    Vocab,
    _assemble,
    load_csv,
    make_windows,
    prepare,
    write_csv,
)
from .metrics import (
    ForecastSet,
    MetricError,
    aggregate,
    compute_metrics,
    format_table,
    write_report_csv,
)
from .models import ModelSpec, SchemaError, WindowError, build_model
from .synthetic import SyntheticConfig, gen_synthetic
from .tensor import ContractError, NumericError
from .training import (
    DivergenceError,
    ProtocolError,
    predict_all,
    run_protocol,
    write_log,
)

_USAGE_ERRORS = (ConfigError, DataError, SplitError, SchemaError, WindowError,
                 ProtocolError, EmbeddingLookupError)
_RUNTIME_ERRORS = (DivergenceError, CheckpointError, AnalysisError, MetricError,
                   ContractError, NumericError, OSError)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stockcast",
        description="Train and analyze embedding, temporal and hybrid forecasters.")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synthetic", help="write a synthetic market CSV")
    g.add_argument("--series", type=int, default=20, help="number of series")
    g.add_argument("--groups", type=int, default=4, help="number of groups")
    g.add_argument("--days", type=int, default=750, help="trading days to simulate")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", help="output CSV path (default <out-dir>/synthetic.csv)")
    g.add_argument("--out-dir", default=".")
    g.set_defaults(func=cmd_gen_synthetic)

    t = sub.add_parser("train", help="run the training protocol for one model")
    t.add_argument("--config", required=True, help="path to a JSON run config")
    t.add_argument("--model", help="override the configured model kind")
    t.add_argument("--seed", type=int, help="override the configured seed")
    t.add_argument("--out-dir", help="override the configured output directory")
    t.add_argument("--pretrain-auto", action="store_true",
                   help="for hybrids: train the donor models first if no "
                        "pretrained checkpoints are configured")
    t.set_defaults(func=cmd_train)

    for name, help_text in (("evaluate", "test-split metrics and predictions"),
                            ("predict", "predictions for every windowed sample")):
        e = sub.add_parser(name, help=help_text)
        e.add_argument("--config", required=True)
        e.add_argument("--checkpoint", required=True)
        e.add_argument("--data", help="CSV to score (default: the configured csv)")
        e.add_argument("--seed", type=int)
        e.add_argument("--out-dir")
        e.set_defaults(func=cmd_evaluate if name == "evaluate" else cmd_predict)

    a = sub.add_parser("analyze-embeddings",
                       help="PCA and cosine neighbors of learned embeddings")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--feature", default="symbol",
                   help="categorical feature whose embedding to analyze")
    a.add_argument("--neighbors", metavar="LABEL",
                   help="print the nearest neighbors of this label")
    a.add_argument("-k", type=int, default=6, help="neighbors per label")
    a.add_argument("--config", help="optional run config (supplies out-dir default)")
    a.add_argument("--seed", type=int, help="accepted for interface uniformity")
    a.add_argument("--out-dir")
    a.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.func(args)
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except _RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


# ---------------------------------------------------------------------------
# gen-synthetic


def cmd_gen_synthetic(args) -> int:
    if args.seed < 0:
        raise ConfigError(f"seed must be >= 0, got {args.seed}")
    cfg = SyntheticConfig(num_series=args.series, groups=args.groups, days=args.days)
    ds = gen_synthetic(seed=args.seed, config=cfg)
    out = args.out or os.path.join(args.out_dir, "synthetic.csv")
    _ensure_parent(out)
    write_csv(ds, out)
    print(f"wrote {len(ds)} rows ({args.series} series, {args.groups} groups, "
          f"{args.days} days) -> {out}")
    return 0


# ---------------------------------------------------------------------------
# train


def _loaded_config(args) -> RunConfig:
    cfg = load_config(args.config)
    return apply_overrides(cfg, kind=getattr(args, "model", None),
                           seed=args.seed, out_dir=args.out_dir)


def _require(cfg: RunConfig, *names):
    for name in names:
        if getattr(cfg, name) is None:
            raise ConfigError(f"config field {name!r} is required for this command")


def _save_model_checkpoint(path, spec, model, cfg: RunConfig, pipe, best_valid):
    extra = {
        "cat_cols": list(cfg.cat_cols),
        "cont_cols": list(cfg.cont_cols),
        "window": cfg.window,
        "valid_start": cfg.valid_start,
        "test_start": cfg.test_start,
        "group_col": cfg.group_col,
        "cont_mean": pipe.cont_scaler.mean.tolist(),
        "cont_std": pipe.cont_scaler.std.tolist(),
        "target_mean": float(pipe.target_scaler.mean[0]),
        "target_std": float(pipe.target_scaler.std[0]),
        "groups": _series_groups_from_pipe(pipe, cfg.group_col),
    }
    vocab = {name: list(v.labels) for name, v in pipe.vocabs.items()}
    save_checkpoint(path, spec, model.state_arrays(), seed=cfg.seed,
                    best_valid=best_valid, optimizer=None, vocab=vocab, extra=extra)


def _series_groups_from_pipe(pipe, group_col: str):
    if group_col not in pipe.schema.cat_cols:
        return {}
    out = {}
    for ws in (pipe.train, pipe.valid, pipe.test):
        for sid, grp in zip(ws.series.tolist(), ws.raw_cats[group_col].tolist()):
            out.setdefault(sid, grp)
    return {k: out[k] for k in sorted(out)}


def _train_one(spec: ModelSpec, cfg: RunConfig, pipe, pretrained=None):
    params = to_train_params(cfg)
    return run_protocol(spec, pipe.train, pipe.valid, cfg.seed, params,
                        pretrained=pretrained)


def cmd_train(args) -> int:
    cfg = _loaded_config(args)
    _require(cfg, "csv", "valid_start", "test_start")
    ds = load_csv(cfg.csv, Schema(cfg.cat_cols, cfg.cont_cols))
    pipe = prepare(ds, cfg.valid_start, cfg.test_start, cfg.window)
    spec = to_model_spec(cfg, pipe.vocabs)
    os.makedirs(cfg.out_dir, exist_ok=True)

    pretrained = None
    if spec.kind in ("tcn-stock2vec", "lstm-stock2vec"):
        pretrained = _hybrid_sources(args, cfg, spec, pipe)

    model, report = _train_one(spec, cfg, pipe, pretrained)
    ck_path = os.path.join(cfg.out_dir, "checkpoint.s2vf")
    _save_model_checkpoint(ck_path, spec, model, cfg, pipe, report.best_valid)
    write_log(report.records, os.path.join(cfg.out_dir, "train_log.csv"))
    with open(os.path.join(cfg.out_dir, "effective_config.json"), "w",
              encoding="utf-8", newline="") as fh:
        fh.write(effective_config_json(cfg))
    for stage in report.stages:
        flag = " (stopped early)" if stage.stopped_early else ""
        print(f"stage {stage.name}: {len(stage.records)} epochs, "
              f"best valid mse {stage.best_valid:.8f}{flag}")
    print(f"checkpoint -> {ck_path}")
    return 0


def _hybrid_sources(args, cfg: RunConfig, spec: ModelSpec, pipe):
    """Donor arrays for transfer: configured checkpoints or freshly trained."""
    import dataclasses

    ts_kind = "ts-tcn" if spec.kind == "tcn-stock2vec" else "ts-lstm"
    if cfg.pretrained_stock2vec and cfg.pretrained_temporal:
        s2v_ck = load_checkpoint(cfg.pretrained_stock2vec)
        ts_ck = load_checkpoint(cfg.pretrained_temporal)
        return {**s2v_ck.arrays, **ts_ck.arrays}
    if not args.pretrain_auto:
        raise ProtocolError(
            f"model kind {spec.kind!r} needs pretrained checkpoints: set "
            f"pretrained_stock2vec and pretrained_temporal in the config, or "
            f"pass --pretrain-auto to train them first")
    arrays = {}
    for donor_spec, name in (
        (spec.with_kind("stock2vec"), "stock2vec"),
        (dataclasses.replace(spec, kind=ts_kind, cat_features=(), n_continuous=0),
         ts_kind),
    ):
        donor, donor_report = _train_one(donor_spec, cfg, pipe)
        donor_path = os.path.join(cfg.out_dir, f"{name}.s2vf")
        _save_model_checkpoint(donor_path, donor_spec, donor, cfg, pipe,
                               donor_report.best_valid)
        print(f"pretrained {name}: best valid mse {donor_report.best_valid:.8f} "
              f"-> {donor_path}")
        arrays.update(donor.state_arrays())
    return arrays


# ---------------------------------------------------------------------------
# evaluate / predict


_PREP_KEYS = ("cat_cols", "cont_cols", "window", "valid_start", "test_start",
              "cont_mean", "cont_std", "target_mean", "target_std")


def _restore_pipeline(ck, data_path):
    extra = ck.extra or {}
    missing = [k for k in _PREP_KEYS if k not in extra]
    if missing:
        raise CheckpointError(
            f"checkpoint lacks preprocessing state ({', '.join(missing)}); "
            f"it was not written by the train command")
    cat_cols, cont_cols = tuple(extra["cat_cols"]), tuple(extra["cont_cols"])
    schema = Schema(cat_cols, cont_cols)
    ds = load_csv(data_path, schema)
    vocab_src = ck.vocab or {}
    missing_vocab = [c for c in cat_cols if c not in vocab_src]
    if missing_vocab:
        raise CheckpointError(
            f"checkpoint lacks vocabularies for: {', '.join(missing_vocab)}")
    vocabs = {c: Vocab(c, tuple(vocab_src[c])) for c in cat_cols}
    cont_scaler = Scaler(cont_cols, np.asarray(extra["cont_mean"], dtype=np.float64),
                         np.asarray(extra["cont_std"], dtype=np.float64))
    target_scaler = Scaler(("target",), np.asarray([extra["target_mean"]]),
                           np.asarray([extra["target_std"]]))
    win = make_windows(ds, int(extra["window"]))
    return extra, ds, win, vocabs, cont_scaler, target_scaler


def _check_schema_matches(cfg: RunConfig, extra) -> None:
    if (tuple(cfg.cat_cols) != tuple(extra["cat_cols"])
            or tuple(cfg.cont_cols) != tuple(extra["cont_cols"])):
        raise SchemaError(
            f"config schema (cats {list(cfg.cat_cols)}, conts {list(cfg.cont_cols)}) "
            f"does not match the checkpoint's training schema "
            f"(cats {extra['cat_cols']}, conts {extra['cont_cols']})")


def _model_from_checkpoint(ck):
    model = build_model(ck.spec, seed=ck.seed if ck.seed is not None else 0)
    model.load_state_arrays(ck.arrays)
    model.eval()
    return model


def _scored_forecasts(ck, ws, target_scaler):
    model = _model_from_checkpoint(ck)
    scaled = predict_all(model, ws)
    yhat = target_scaler.inverse(scaled[:, 0])
    group_col = (ck.extra or {}).get("group_col")
    if group_col in ws.raw_cats:
        groups = ws.raw_cats[group_col]
    else:
        groups = ws.series
    return ForecastSet(series=ws.series, group=np.asarray(groups),
                       dates=ws.dates, actual=ws.raw_target, predicted=yhat)


def _write_predictions(fs: ForecastSet, path) -> None:
    order = np.lexsort((fs.series, fs.dates))
    lines = ["date,series,y,yhat"]
    for i in order:
        lines.append(f"{fs.dates[i]},{fs.series[i]},"
                     f"{repr(float(fs.actual[i]))},{repr(float(fs.predicted[i]))}")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def cmd_evaluate(args) -> int:
    cfg = _loaded_config(args)
    data_path = args.data or cfg.csv
    if data_path is None:
        raise ConfigError("no data to score: set csv in the config or pass --data")
    ck = load_checkpoint(args.checkpoint)
    extra, ds, win, vocabs, cont_scaler, target_scaler = _restore_pipeline(ck, data_path)
    _check_schema_matches(cfg, extra)
    mask = ds.dates[win.row_idx] >= extra["test_start"]
    if not mask.any():
        raise SplitError(f"no samples dated on or after the checkpoint's test "
                         f"split start {extra['test_start']}")
    ws = _assemble(ds, win, mask, vocabs, cont_scaler, target_scaler)
    fs = _scored_forecasts(ck, ws, target_scaler)

    out_dir = args.out_dir or cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    _write_predictions(fs, os.path.join(out_dir, "predictions.csv"))
    overall = compute_metrics(fs)
    by_group = sorted(aggregate(fs, by="group").items())
    by_series = sorted(aggregate(fs, by="series").items())
    write_report_csv([("all", overall)], os.path.join(out_dir, "metrics.csv"))
    write_report_csv(by_group, os.path.join(out_dir, "metrics_by_group.csv"))
    write_report_csv(by_series, os.path.join(out_dir, "metrics_by_series.csv"))
    print(format_table([("all", overall)] + by_group))
    print(f"reports -> {out_dir}")
    return 0


def cmd_predict(args) -> int:
    cfg = _loaded_config(args)
    data_path = args.data or cfg.csv
    if data_path is None:
        raise ConfigError("no data to score: set csv in the config or pass --data")
    ck = load_checkpoint(args.checkpoint)
    extra, ds, win, vocabs, cont_scaler, target_scaler = _restore_pipeline(ck, data_path)
    _check_schema_matches(cfg, extra)
    mask = np.ones(len(win.row_idx), dtype=bool)
    ws = _assemble(ds, win, mask, vocabs, cont_scaler, target_scaler)
    fs = _scored_forecasts(ck, ws, target_scaler)
    out_dir = args.out_dir or cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "predictions.csv")
    _write_predictions(fs, path)
    print(f"wrote {len(fs)} predictions -> {path}")
    return 0


# ---------------------------------------------------------------------------
# analyze-embeddings


def cmd_analyze(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    em = extract_embeddings(ck, args.feature)
    if not 1 <= args.k < len(em.labels):
        raise ConfigError(f"-k must satisfy 1 <= k < {len(em.labels)} "
                          f"(the {args.feature!r} vocabulary size), got {args.k}")
    query = (nearest_neighbors(em, args.neighbors, args.k)
             if args.neighbors else None)
    result = pca(em)
    rows = all_neighbor_rows(em, args.k)
    if args.out_dir:
        out_dir = args.out_dir
    elif args.config:
        out_dir = load_config(args.config).out_dir
    else:
        parent = os.path.dirname(os.path.abspath(args.checkpoint))
        out_dir = os.path.join(parent, "analysis")
    groups = (ck.extra or {}).get("groups") or None
    paths = export_report(em, result, out_dir, groups=groups, neighbor_rows=rows)
    if query is not None:
        print(format_neighbors(args.neighbors, query))
    top = ", ".join(f"pc{i + 1}={r:.4f}"
                    for i, r in enumerate(result.explained_variance_ratio[:3]))
    print(f"explained variance: {top}")
    print(f"reports -> {os.path.dirname(paths['projections'])}")
    return 0


def _ensure_parent(path) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    if parent:
        os.makedirs(parent, exist_ok=True)


if __name__ == "__main__":
    sys.exit(main())
