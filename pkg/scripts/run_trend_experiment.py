"""Multi-seed comparison of temporal, tabular, and hybrid forecasters.

For each seed a fresh synthetic market is generated, split chronologically,
and three models are trained with the standard protocol: a pure temporal
convolutional baseline, the entity-embedding tabular model, and the hybrid
that fuses both (initialized from the two models just trained). Test RMSE
is reported per seed along with medians and relative margins.

Run from the repository root:

    python3 scripts/run_trend_experiment.py --seeds 10
"""

import argparse
import dataclasses
import sys
import time

import numpy as np

from stockcast.config import RunConfig, to_model_spec, to_train_params
from stockcast.data import prepare
from stockcast.metrics import ForecastSet, compute_metrics
from stockcast.synthetic import gen_synthetic
from stockcast.training import predict_all, run_protocol

MODELS = ("ts-tcn", "stock2vec", "tcn-stock2vec")

# corpus shape and window shared by the CLI defaults and the acceptance suite
DEFAULTS = {"series": 20, "groups": 4, "days": 750, "window": 16}


def test_rmse(model, pipe) -> float:
    scaled = predict_all(model, pipe.test)
    yhat = pipe.target_scaler.inverse(scaled[:, 0])
    fs = ForecastSet(pipe.test.series, pipe.test.raw_cats["group"],
                     pipe.test.dates, pipe.test.raw_target, yhat)
    return compute_metrics(fs).rmse


def run_seed(seed: int, args) -> dict:
    ds = gen_synthetic(args.series, args.groups, args.days, seed=seed)
    dates = np.unique(ds.dates)
    valid_start = dates[int(0.65 * len(dates))]
    test_start = dates[int(0.8 * len(dates))]
    pipe = prepare(ds, valid_start, test_start, args.window)

    cfg = RunConfig(kind="stock2vec", window=args.window,
                    hidden_sizes=(64, 32), hidden_dropout=(0.001, 0.01),
                    tcn_blocks=4, tcn_channels=16, temporal_features=30,
                    s2v_cycles=8, ts_lr=3e-3, ts_epochs=32,
                    head_max_lr=1e-3, head_cycle_epochs=8,
                    finetune_lr=3e-5, finetune_epochs=16, patience=4,
                    seed=seed)
    params = to_train_params(cfg)
    s2v_spec = to_model_spec(cfg, pipe.vocabs)
    ts_spec = dataclasses.replace(s2v_spec, kind="ts-tcn",
                                  cat_features=(), n_continuous=0)
    hyb_spec = dataclasses.replace(s2v_spec, kind="tcn-stock2vec")

    s2v, _ = run_protocol(s2v_spec, pipe.train, pipe.valid, seed, params)
    ts, _ = run_protocol(ts_spec, pipe.train, pipe.valid, seed, params)
    donors = {**s2v.state_arrays(), **ts.state_arrays()}
    hyb, _ = run_protocol(hyb_spec, pipe.train, pipe.valid, seed, params,
                          pretrained=donors)
    return {"ts-tcn": test_rmse(ts, pipe), "stock2vec": test_rmse(s2v, pipe),
            "tcn-stock2vec": test_rmse(hyb, pipe)}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=10,
                    help="number of independent seeds (default 10)")
    ap.add_argument("--series", type=int, default=DEFAULTS["series"])
    ap.add_argument("--groups", type=int, default=DEFAULTS["groups"])
    ap.add_argument("--days", type=int, default=DEFAULTS["days"])
    ap.add_argument("--window", type=int, default=DEFAULTS["window"])
    ap.add_argument("--margin", type=float, default=0.05,
                    help="required relative median improvement per rung")
    args = ap.parse_args(argv)

    t0 = time.time()
    rows = []
    print(f"{'seed':>4}  {'ts-tcn':>10}  {'stock2vec':>10}  {'hybrid':>10}")
    for seed in range(args.seeds):
        r = run_seed(seed, args)
        rows.append(r)
        print(f"{seed:>4}  {r['ts-tcn']:>10.4f}  {r['stock2vec']:>10.4f}  "
              f"{r['tcn-stock2vec']:>10.4f}")

    med = {m: float(np.median([r[m] for r in rows])) for m in MODELS}
    print(f"\nmedian test RMSE over {args.seeds} seeds "
          f"({time.time() - t0:.0f}s total):")
    for m in MODELS:
        print(f"  {m:<15} {med[m]:.4f}")

    margin_s2v = 1.0 - med["stock2vec"] / med["ts-tcn"]
    margin_hyb = 1.0 - med["tcn-stock2vec"] / med["stock2vec"]
    wins_s2v = sum(r["stock2vec"] < r["ts-tcn"] for r in rows)
    wins_hyb = sum(r["tcn-stock2vec"] < r["stock2vec"] for r in rows)
    print(f"\nstock2vec vs ts-tcn:        margin {margin_s2v:+.1%}, "
          f"wins {wins_s2v}/{args.seeds}")
    print(f"tcn-stock2vec vs stock2vec: margin {margin_hyb:+.1%}, "
          f"wins {wins_hyb}/{args.seeds}")

    ok = (margin_s2v >= args.margin and margin_hyb >= args.margin
          and wins_s2v >= args.seeds - 2 and wins_hyb >= args.seeds - 2)
    print(f"\ntrend {'holds' if ok else 'FAILED'}: expect hybrid < tabular "
          f"< temporal with >= {args.margin:.0%} median margins")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
