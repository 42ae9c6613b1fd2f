"""Forecast error metrics and grouped evaluation reports.

Four error measures over a set of (actual, predicted) pairs, plus per-series
and per-group breakdowns and a median/IQR summary of the absolute errors.
"""

from dataclasses import dataclass
from typing import Dict, Iterable, List, Tuple

import numpy as np

# percentage metrics blow up on near-zero actuals; reject rather than skip
ZERO_TARGET_EPS = 1e-12


class MetricError(ValueError):
    """Raised when metric preconditions are violated."""


@dataclass(frozen=True)
class ForecastSet:
    """Aligned forecast records: one (actual, predicted) pair per series/date."""

    series: np.ndarray
    group: np.ndarray
    dates: np.ndarray
    actual: np.ndarray
    predicted: np.ndarray

    def __post_init__(self):
        n = len(self.actual)
        for name in ("series", "group", "dates", "predicted"):
            if len(getattr(self, name)) != n:
                raise MetricError(f"field {name!r} has length {len(getattr(self, name))}, "
                                  f"expected {n}")
        for name in ("actual", "predicted"):
            vals = np.asarray(getattr(self, name), dtype=np.float64)
            if n and not np.all(np.isfinite(vals)):
                bad = int(np.flatnonzero(~np.isfinite(vals))[0])
                raise MetricError(
                    f"non-finite {name} value for series {self.series[bad]!r} "
                    f"on {self.dates[bad]}")
            object.__setattr__(self, name, vals)
        keys = list(zip(self.series.tolist(), self.dates.tolist()))
        if len(set(keys)) != n:
            seen = set()
            for sid, date in keys:
                if (sid, date) in seen:
                    raise MetricError(f"duplicate record for series {sid!r} on {date}")
                seen.add((sid, date))

    def __len__(self) -> int:
        return len(self.actual)

    def subset(self, mask: np.ndarray) -> "ForecastSet":
        return ForecastSet(self.series[mask], self.group[mask], self.dates[mask],
                           self.actual[mask], self.predicted[mask])


@dataclass(frozen=True)
class MetricReport:
    rmse: float
    mae: float
    mape: float
    rmspe: float
    count: int
    median_abs_err: float
    iqr: float


def compute_metrics(fs: ForecastSet) -> MetricReport:
    """All four error measures plus the absolute-error median and IQR.

    RMSE = sqrt(mean((y - yhat)^2))        MAE  = mean(|y - yhat|)
    MAPE = 100 * mean(|(y - yhat) / y|)    RMSPE = 100 * sqrt(mean(((y - yhat) / y)^2))
    """
    h = len(fs)
    if h < 1:
        raise MetricError("cannot compute metrics over an empty forecast set")
    tiny = np.abs(fs.actual) <= ZERO_TARGET_EPS
    if np.any(tiny):
        bad = int(np.flatnonzero(tiny)[0])
        raise MetricError(
            f"actual value {fs.actual[bad]!r} for series {fs.series[bad]!r} on "
            f"{fs.dates[bad]} is too close to zero for percentage metrics "
            f"(|y| <= {ZERO_TARGET_EPS})")
    err = fs.actual - fs.predicted
    pct = err / fs.actual
    dist = error_distribution(fs)
    # summing in sorted order makes every metric exactly permutation invariant
    return MetricReport(
        rmse=float(np.sqrt(np.mean(np.sort(err ** 2)))),
        mae=float(np.mean(np.sort(np.abs(err)))),
        mape=float(100.0 * np.mean(np.sort(np.abs(pct)))),
        rmspe=float(100.0 * np.sqrt(np.mean(np.sort(pct ** 2)))),
        count=h,
        median_abs_err=dist["median_abs_err"],
        iqr=dist["iqr"],
    )


def error_distribution(fs: ForecastSet) -> Dict[str, float]:
    """Median and interquartile range of |y - yhat| (linear-interpolation quantiles)."""
    if len(fs) < 1:
        raise MetricError("cannot summarize an empty forecast set")
    abs_err = np.abs(fs.actual - fs.predicted)
    q1, q3 = np.quantile(abs_err, [0.25, 0.75])
    return {"median_abs_err": float(np.median(abs_err)), "iqr": float(q3 - q1)}


def aggregate(fs: ForecastSet, by: str) -> Dict[str, MetricReport]:
    """Per-key metric reports, each computed over that key's own records."""
    if by == "series":
        keys = fs.series
    elif by == "group":
        keys = fs.group
    else:
        raise MetricError(f"unknown aggregation key {by!r}; expected 'series' or 'group'")
    out = {}
    for key in sorted(set(keys.tolist())):
        out[key] = compute_metrics(fs.subset(keys == key))
    return out


REPORT_HEADER = "key,rmse,mae,mape,rmspe,H,median_abs_err,iqr"


def write_report_csv(rows: Iterable[Tuple[str, MetricReport]], path) -> None:
    lines = [REPORT_HEADER]
    for key, rep in rows:
        lines.append(",".join([
            key,
            repr(rep.rmse), repr(rep.mae), repr(rep.mape), repr(rep.rmspe),
            str(rep.count), repr(rep.median_abs_err), repr(rep.iqr),
        ]))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def format_table(rows: Iterable[Tuple[str, MetricReport]]) -> str:
    """Aligned text table of metric reports, one row per key."""
    header = ["key", "RMSE", "MAE", "MAPE", "RMSPE", "H", "med|err|", "IQR"]
    body: List[List[str]] = []
    for key, rep in rows:
        body.append([key] + [f"{v:.4f}" for v in
                             (rep.rmse, rep.mae, rep.mape, rep.rmspe)]
                    + [str(rep.count)]
                    + [f"{v:.4f}" for v in (rep.median_abs_err, rep.iqr)])
    widths = [max(len(header[i]), *(len(r[i]) for r in body)) if body else len(header[i])
              for i in range(len(header))]
    fmt = "  ".join(f"{{:<{w}}}" if i == 0 else f"{{:>{w}}}"
                    for i, w in enumerate(widths))
    lines = [fmt.format(*header)]
    lines.extend(fmt.format(*row) for row in body)
    return "\n".join(lines)
