"""Synthetic market generator tests: determinism, structure, correlation contract."""

import hashlib

import numpy as np
import pytest

from stockcast.data import DataError, write_csv
from stockcast.synthetic import SyntheticConfig, gen_synthetic


def _price_tracks(ds):
    """Reconstruct per-series price paths from the lag1 column (price at row date)."""
    out = {}
    for sid in np.unique(ds.series):
        pos = np.flatnonzero(ds.series == sid)
        out[sid] = ds.conts[pos, 0]
    return out


def test_row_count_and_columns():
    ds = gen_synthetic(num_series=6, groups=3, days=100, seed=0)
    assert len(ds) == 6 * (100 - 21)  # 20 warmup days and one terminal day
    assert ds.schema.cat_cols == ("symbol", "group", "day_of_week", "month")
    assert ds.schema.cont_cols == ("lag1", "ma5", "ma20")
    assert set(ds.cats["group"]) == {"G0", "G1", "G2"}


def test_generator_is_deterministic(tmp_path):
    a = gen_synthetic(num_series=5, groups=2, days=60, seed=9)
    b = gen_synthetic(num_series=5, groups=2, days=60, seed=9)
    pa, pb = tmp_path / "a.csv", tmp_path / "b.csv"
    write_csv(a, pa)
    write_csv(b, pb)
    ha = hashlib.sha256(pa.read_bytes()).hexdigest()
    hb = hashlib.sha256(pb.read_bytes()).hexdigest()
    assert ha == hb
    c = gen_synthetic(num_series=5, groups=2, days=60, seed=10)
    assert not np.array_equal(a.target, c.target)


def test_parameter_guards():
    with pytest.raises(DataError, match="num_series >= groups"):
        gen_synthetic(num_series=2, groups=3, days=60, seed=0)
    with pytest.raises(DataError, match="groups >= 1"):
        gen_synthetic(num_series=2, groups=0, days=60, seed=0)
    with pytest.raises(DataError, match="days >= 30"):
        gen_synthetic(num_series=4, groups=2, days=10, seed=0)


def test_trading_days_are_weekdays_only():
    import datetime

    ds = gen_synthetic(num_series=2, groups=1, days=70, seed=1)
    weekdays = {datetime.date.fromisoformat(d).weekday() for d in np.unique(ds.dates)}
    assert weekdays <= {0, 1, 2, 3, 4}


def test_target_is_next_rows_price():
    ds = gen_synthetic(num_series=3, groups=1, days=60, seed=2)
    for sid in np.unique(ds.series):
        pos = np.flatnonzero(ds.series == sid)
        lag1 = ds.conts[pos, 0]
        target = ds.target[pos]
        np.testing.assert_allclose(target[:-1], lag1[1:], rtol=1e-12)


def test_moving_averages_are_consistent_with_price_track():
    ds = gen_synthetic(num_series=2, groups=1, days=80, seed=3)
    pos = np.flatnonzero(ds.series == ds.series[0])
    price = ds.conts[pos, 0]
    ma5 = ds.conts[pos, 1]
    ma20 = ds.conts[pos, 2]
    for i in range(19, len(pos)):
        np.testing.assert_allclose(ma5[i], price[i - 4 : i + 1].mean(), rtol=1e-12)
        np.testing.assert_allclose(ma20[i], price[i - 19 : i + 1].mean(), rtol=1e-12)


def test_degenerate_generator_gives_affine_group_copies():
    # no idiosyncratic level, no noise: within a group, log-price differences
    # between series are constant over time
    cfg = SyntheticConfig(num_series=4, groups=2, days=60,
                          level_scale=0.0, noise_scale=0.0)
    ds = gen_synthetic(config=cfg, seed=4)
    tracks = _price_tracks(ds)
    groups = {sid: ds.cats["group"][np.flatnonzero(ds.series == sid)[0]] for sid in tracks}
    sids = sorted(tracks)
    for a in sids:
        for b in sids:
            if a < b and groups[a] == groups[b]:
                diff = np.log(tracks[a]) - np.log(tracks[b])
                assert np.ptp(diff) < 1e-9


def test_within_group_correlation_exceeds_between_group():
    # Monte-Carlo over 20 seeds on daily log returns at default scales
    wins = 0
    margins = []
    for seed in range(20):
        ds = gen_synthetic(num_series=8, groups=2, days=160, seed=seed)
        tracks = _price_tracks(ds)
        sids = sorted(tracks)
        rets = {s: np.diff(np.log(tracks[s])) for s in sids}
        groups = {s: ds.cats["group"][np.flatnonzero(ds.series == s)[0]] for s in sids}
        within, between = [], []
        for i, a in enumerate(sids):
            for b in sids[i + 1 :]:
                c = np.corrcoef(rets[a], rets[b])[0, 1]
                (within if groups[a] == groups[b] else between).append(c)
        margin = np.mean(within) - np.mean(between)
        margins.append(margin)
        wins += margin > 0
    assert wins >= 18, f"within>between held in only {wins}/20 seeds"
    assert np.mean(margins) > 0.05
