"""Metric formula oracles, aggregation, and distribution summaries."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stockcast.metrics import (
    ForecastSet,
    MetricError,
    aggregate,
    compute_metrics,
    error_distribution,
    format_table,
    write_report_csv,
)


def _fs(y, yhat, series=None, group=None):
    n = len(y)
    series = np.array(series if series is not None else [f"S{i}" for i in range(n)])
    group = np.array(group if group is not None else ["G0"] * n)
    dates = np.array([f"2020-01-{i + 1:02d}" for i in range(n)])
    return ForecastSet(series, group, dates,
                       np.asarray(y, dtype=np.float64),
                       np.asarray(yhat, dtype=np.float64))


# ---------------------------------------------------------------------------
# formula oracles


def test_perfect_forecast_is_all_zero():
    rep = compute_metrics(_fs([3.0, 7.0, 11.0], [3.0, 7.0, 11.0]))
    assert rep.rmse == rep.mae == rep.mape == rep.rmspe == 0.0
    assert rep.count == 3


def test_symmetric_ten_percent_errors():
    rep = compute_metrics(_fs([100.0, 100.0], [90.0, 110.0]))
    assert rep.rmse == pytest.approx(10.0, abs=1e-12)
    assert rep.mae == pytest.approx(10.0, abs=1e-12)
    assert rep.mape == pytest.approx(10.0, abs=1e-12)
    assert rep.rmspe == pytest.approx(10.0, abs=1e-12)


def test_single_record_half_error():
    rep = compute_metrics(_fs([2.0], [1.0]))
    assert rep.rmse == 1.0 and rep.mae == 1.0
    assert rep.mape == pytest.approx(50.0) and rep.rmspe == pytest.approx(50.0)


def test_brute_force_reference():
    r = np.random.default_rng(5)
    y = r.uniform(1.0, 10.0, size=40)
    yhat = y + r.normal(size=40)
    rep = compute_metrics(_fs(y, yhat))
    assert rep.rmse == pytest.approx(np.sqrt(sum((a - b) ** 2 for a, b in zip(y, yhat)) / 40), rel=1e-12)
    assert rep.mae == pytest.approx(sum(abs(a - b) for a, b in zip(y, yhat)) / 40, rel=1e-12)
    assert rep.mape == pytest.approx(100 / 40 * sum(abs((a - b) / a) for a, b in zip(y, yhat)), rel=1e-12)
    assert rep.rmspe == pytest.approx(100 * np.sqrt(sum(((a - b) / a) ** 2 for a, b in zip(y, yhat)) / 40), rel=1e-12)


def test_near_zero_actual_is_a_hard_error():
    with pytest.raises(MetricError, match=r"S1.*2020-01-02"):
        compute_metrics(_fs([5.0, 1e-13, 2.0], [5.0, 0.0, 2.0]))


def test_empty_set_rejected():
    with pytest.raises(MetricError, match="empty"):
        compute_metrics(_fs([], []))


# ---------------------------------------------------------------------------
# construction guards


def test_duplicate_series_date_rejected():
    with pytest.raises(MetricError, match="duplicate"):
        ForecastSet(np.array(["A", "A"]), np.array(["G", "G"]),
                    np.array(["2020-01-01", "2020-01-01"]),
                    np.array([1.0, 2.0]), np.array([1.0, 2.0]))


def test_non_finite_values_rejected():
    with pytest.raises(MetricError, match="non-finite"):
        _fs([1.0, np.nan], [1.0, 1.0])
    with pytest.raises(MetricError, match="non-finite"):
        _fs([1.0, 1.0], [np.inf, 1.0])


def test_length_mismatch_rejected():
    with pytest.raises(MetricError, match="length"):
        ForecastSet(np.array(["A"]), np.array(["G"]), np.array(["2020-01-01"]),
                    np.array([1.0]), np.array([1.0, 2.0]))


# ---------------------------------------------------------------------------
# properties


@given(st.lists(st.tuples(st.floats(1.0, 100.0), st.floats(-50.0, 50.0)),
                min_size=1, max_size=30))
@settings(max_examples=60, deadline=None)
def test_power_mean_inequalities(pairs):
    y = [p[0] for p in pairs]
    yhat = [p[0] + p[1] for p in pairs]
    rep = compute_metrics(_fs(y, yhat))
    assert rep.rmse >= rep.mae - 1e-9 * max(1.0, rep.rmse)
    assert rep.rmspe >= rep.mape - 1e-9 * max(1.0, rep.rmspe)


def test_scale_equivariance():
    r = np.random.default_rng(6)
    y = r.uniform(1.0, 5.0, size=25)
    yhat = y + r.normal(size=25) * 0.1
    base = compute_metrics(_fs(y, yhat))
    scaled = compute_metrics(_fs(y * 37.0, yhat * 37.0))
    assert scaled.rmse == pytest.approx(base.rmse * 37.0, rel=1e-9)
    assert scaled.mae == pytest.approx(base.mae * 37.0, rel=1e-9)
    assert scaled.mape == pytest.approx(base.mape, rel=1e-9)
    assert scaled.rmspe == pytest.approx(base.rmspe, rel=1e-9)


def test_permutation_invariance():
    r = np.random.default_rng(7)
    y = r.uniform(1.0, 5.0, size=20)
    yhat = y + r.normal(size=20) * 0.2
    fs = _fs(y, yhat)
    perm = r.permutation(20)
    shuffled = ForecastSet(fs.series[perm], fs.group[perm], fs.dates[perm],
                           fs.actual[perm], fs.predicted[perm])
    a, b = compute_metrics(fs), compute_metrics(shuffled)
    assert (a.rmse, a.mae, a.mape, a.rmspe) == (b.rmse, b.mae, b.mape, b.rmspe)
    assert (a.median_abs_err, a.iqr) == (b.median_abs_err, b.iqr)


# ---------------------------------------------------------------------------
# aggregation


def test_single_group_aggregate_equals_global():
    fs = _fs([2.0, 3.0, 4.0], [1.5, 3.5, 4.0])
    assert aggregate(fs, by="group")["G0"] == compute_metrics(fs)


def test_disjoint_groups_split_cleanly():
    fs = _fs([1.0, 2.0, 4.0, 8.0], [1.0, 2.0, 5.0, 9.0],
             group=["A", "A", "B", "B"])
    reports = aggregate(fs, by="group")
    assert set(reports) == {"A", "B"}
    assert reports["A"].rmse == 0.0
    assert reports["B"].rmse > 0.0


def test_per_series_matches_brute_force_recomputation():
    r = np.random.default_rng(8)
    n = 60
    series = [f"S{i % 5}" for i in range(n)]
    y = r.uniform(1.0, 9.0, size=n)
    yhat = y + r.normal(size=n) * 0.3
    fs = ForecastSet(np.array(series), np.array(["G"] * n),
                     np.array([f"2020-{1 + i // 28:02d}-{1 + i % 28:02d}" for i in range(n)]),
                     y, yhat)
    reports = aggregate(fs, by="series")
    for sid in set(series):
        idx = [i for i in range(n) if series[i] == sid]
        expected = np.sqrt(np.mean([(y[i] - yhat[i]) ** 2 for i in idx]))
        assert reports[sid].rmse == pytest.approx(expected, rel=1e-12)
        assert reports[sid].count == len(idx)


def test_unknown_aggregation_key():
    with pytest.raises(MetricError, match="unknown aggregation"):
        aggregate(_fs([1.0], [1.0]), by="sector")


# ---------------------------------------------------------------------------
# error distribution


def test_constant_errors_zero_iqr():
    d = error_distribution(_fs([2.0, 3.0, 4.0], [1.0, 2.0, 3.0]))
    assert d["median_abs_err"] == 1.0 and d["iqr"] == 0.0


def test_linear_interpolation_quantiles():
    d = error_distribution(_fs([1.0, 2.0, 3.0, 4.0], [1.0, 1.0, 1.0, 1.0]))
    # abs errors [0, 1, 2, 3]: median 1.5, Q1 0.75, Q3 2.25
    assert d["median_abs_err"] == pytest.approx(1.5, abs=1e-12)
    assert d["iqr"] == pytest.approx(1.5, abs=1e-12)


# ---------------------------------------------------------------------------
# export


def test_report_csv_round_trip(tmp_path):
    fs = _fs([1.0, 2.0, 4.0, 8.0], [1.1, 2.0, 5.0, 9.0], group=["A", "A", "B", "B"])
    rows = [("all", compute_metrics(fs))] + sorted(aggregate(fs, by="group").items())
    path = tmp_path / "report.csv"
    write_report_csv(rows, path)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "key,rmse,mae,mape,rmspe,H,median_abs_err,iqr"
    assert len(lines) == 4
    first = lines[1].split(",")
    assert first[0] == "all"
    rep = rows[0][1]
    assert float(first[1]) == rep.rmse and float(first[4]) == rep.rmspe
    assert int(first[5]) == 4
    assert float(first[7]) == rep.iqr


def test_format_table_is_aligned():
    fs = _fs([1.0, 2.0], [1.5, 2.5])
    table = format_table([("all", compute_metrics(fs))])
    lines = table.split("\n")
    assert len(lines) == 2
    assert lines[0].split()[:3] == ["key", "RMSE", "MAE"]
    assert len(lines[0]) == len(lines[1])
