"""Synthetic multi-series market generator.

Each series i in group g follows a log-price process
    log P_i(t) = b_i + F_g(t) + u_i(t) + s(t) + e_i(t)
with a group-shared factor F_g (random walk whose drift is group-specific and
whose increments carry AR(1) momentum plus a delayed negative echo of the
innovation several days back), a series-specific mean-reverting AR(1) level
u_i, a calendar effect s(t) (global day-of-week plus group-specific weekday
and month deviations), and iid noise e_i. Groups therefore differ in drift,
calendar signature, and factor path; series within a group co-move; and
tomorrow's return is partially predictable from the recent history (momentum,
echo, mean reversion) in a way the static per-day features only partially
expose: the echo in particular sits at a lag that lag1 and the 5-day mean
never see. The trading calendar is Mon-Fri minus seeded market holidays, so
weekday effects recur at irregular row lags and are only cleanly available
through the day_of_week column, while momentum, echo, and reversion live at
exact trading-day lags either way.

Emitted columns: categorical {symbol, group, day_of_week, month}, continuous
{lag1, ma5, ma20} (previous close and 5/20-day moving averages), target =
next trading day's price. The first `warmup` days per series are used only to
prime the moving averages.
"""

from __future__ import annotations

import datetime
from dataclasses import dataclass

import numpy as np

from .data import DataError, Schema, TabularDataset
from .seeding import sub_rng

SYNTH_SCHEMA = Schema(
    cat_cols=("symbol", "group", "day_of_week", "month"),
    cont_cols=("lag1", "ma5", "ma20"),
)

_DOW_NAMES = ("Mon", "Tue", "Wed", "Thu", "Fri")
_MONTH_NAMES = ("Jan", "Feb", "Mar", "Apr", "May", "Jun",
                "Jul", "Aug", "Sep", "Oct", "Nov", "Dec")
_WARMUP = 20


@dataclass(frozen=True)
class SyntheticConfig:
    num_series: int = 20
    groups: int = 4
    days: int = 750
    start_date: str = "2016-01-04"   # a Monday
    drift_low: float = -0.0005
    drift_high: float = 0.0005
    momentum: float = 0.6            # AR(1) coefficient on factor increments
    factor_scale: float = 0.015
    echo: float = -0.95              # delayed innovation echo in the factor
    echo_lag: int = 7
    revert_low: float = 0.93         # series AR(1) level persistence range
    revert_high: float = 0.96
    level_scale: float = 0.005
    noise_scale: float = 0.002
    dow_scale: float = 0.020         # calendar effects are exact-RMS amplitudes
    group_dow_scale: float = 0.020   # group-specific day-of-week deviation
    month_scale: float = 0.008
    holiday_rate: float = 0.04       # ~10 market closures per year

    def __post_init__(self):
        if not self.num_series >= self.groups >= 1:
            raise DataError(
                f"need num_series >= groups >= 1, got {self.num_series}, {self.groups}"
            )
        if self.days < 30:
            raise DataError(f"need days >= 30, got {self.days}")
        if self.echo_lag < 1:
            raise DataError(f"need echo_lag >= 1, got {self.echo_lag}")


def _trading_days(start: str, n: int, rng: np.random.Generator,
                  holiday_rate: float) -> list[datetime.date]:
    # Mon-Fri minus scattered market holidays. Holidays shift the weekday
    # phase of the row index at irregular points, so same-weekday
    # observations do not sit at fixed row lags; the day_of_week column is
    # the only reliable carrier of calendar structure
    day = datetime.date.fromisoformat(start)
    out = []
    while len(out) < n:
        if day.weekday() < 5 and rng.random() >= holiday_rate:
            out.append(day)
        day += datetime.timedelta(days=1)
    return out


def gen_synthetic(num_series: int = 20, groups: int = 4, days: int = 750, seed: int = 0,
                  config: SyntheticConfig | None = None) -> TabularDataset:
    cfg = config or SyntheticConfig(num_series=num_series, groups=groups, days=days)
    rng = sub_rng(seed, "synthetic")
    k, g, n = cfg.num_series, cfg.groups, cfg.days

    dates = _trading_days(cfg.start_date, n, rng, cfg.holiday_rate)
    group_of = np.arange(k) % g
    # a narrow base range keeps absolute daily moves commensurate across
    # series, so the globally scaled history still resolves fine structure
    base = rng.uniform(np.log(60.0), np.log(140.0), size=k)
    # evenly spaced group drifts keep the groups distinguishable at any seed
    drift = (np.linspace(cfg.drift_low, cfg.drift_high, g) if g > 1
             else np.array([(cfg.drift_low + cfg.drift_high) / 2]))
    revert = rng.uniform(cfg.revert_low, cfg.revert_high, size=k)

    def calendar_effect(shape, rms):
        # centered and rescaled so the effect's RMS is exactly `rms` at any
        # seed, keeping calendar strength comparable across corpora
        raw = rng.uniform(-1.0, 1.0, size=shape)
        raw -= raw.mean(axis=-1, keepdims=True)
        return raw / np.maximum(raw.std(axis=-1, keepdims=True), 1e-12) * rms

    dow_eff = calendar_effect(5, cfg.dow_scale)
    # weekday and month responses carry group-specific deviations, a
    # cross-sectional signature that no single series' own history reveals
    group_dow = calendar_effect((g, 5), cfg.group_dow_scale)
    month_eff = calendar_effect((g, 12), cfg.month_scale)

    # group factors: random walk whose increments carry AR(1) momentum plus a
    # delayed negative echo of the innovation echo_lag days back; the echo is
    # recoverable from a price window but not from lag1/ma5
    eps = rng.normal(size=(g, n)) * cfg.factor_scale
    z = np.zeros((g, n))
    for t in range(n):
        prev = z[:, t - 1] if t else 0.0
        past = eps[:, t - cfg.echo_lag] if t >= cfg.echo_lag else 0.0
        z[:, t] = cfg.momentum * prev + eps[:, t] + cfg.echo * past
    # drift stays outside the recursion so the mean increment is exactly drift
    factor = np.cumsum(drift[:, None] + z, axis=1)

    # series-specific mean-reverting levels
    eta = rng.normal(size=(k, n)) * cfg.level_scale
    level = np.zeros((k, n))
    for t in range(1, n):
        level[:, t] = revert * level[:, t - 1] + eta[:, t]

    noise = rng.normal(size=(k, n)) * cfg.noise_scale

    dow_idx = np.array([d.weekday() for d in dates])
    month_idx = np.array([d.month - 1 for d in dates])
    seasonal = (dow_eff[dow_idx][None, :] + group_dow[group_of][:, dow_idx]
                + month_eff[group_of][:, month_idx])

    log_price = base[:, None] + factor[group_of] + level + seasonal + noise
    price = np.exp(log_price)

    width = len(str(k - 1))
    symbols = [f"S{i:0{width}d}" for i in range(k)]
    rows_dates, rows_series, rows_conts, rows_target = [], [], [], []
    cats: dict[str, list] = {c: [] for c in SYNTH_SCHEMA.cat_cols}
    for i in range(k):
        p = price[i]
        for t in range(_WARMUP, n - 1):
            rows_dates.append(dates[t].isoformat())
            rows_series.append(symbols[i])
            cats["symbol"].append(symbols[i])
            cats["group"].append(f"G{group_of[i]}")
            cats["day_of_week"].append(_DOW_NAMES[dow_idx[t]])
            cats["month"].append(_MONTH_NAMES[month_idx[t]])
            # lag1 is the close one step before the target date, i.e. day t itself
            rows_conts.append([p[t], p[t - 4 : t + 1].mean(), p[t - 19 : t + 1].mean()])
            rows_target.append(p[t + 1])

    order = np.lexsort((np.asarray(rows_series), np.asarray(rows_dates)))
    return TabularDataset(
        schema=SYNTH_SCHEMA,
        dates=np.asarray(rows_dates)[order],
        series=np.asarray(rows_series)[order],
        cats={c: np.asarray(v)[order] for c, v in cats.items()},
        conts=np.asarray(rows_conts, dtype=np.float64)[order],
        target=np.asarray(rows_target, dtype=np.float64)[order],
    )
