"""CSV ingestion, chronological splitting, scaling, vocabularies, and windowing.

Dataset CSV layout: header `date,series_id,<cat cols...>,<cont cols...>,target`,
UTF-8, RFC 4180 quoting. The target in a row dated d is the series' price on
the next trading day after d, so a row's own target is never visible to any
input built for that row: history windows are the series' past target values
shifted back one row, ending the day before the target date.
"""

from __future__ import annotations

import csv
import datetime
import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger("stockcast.data")

UNK_LABEL = "<unk>"


class DataError(ValueError):
    pass


class SplitError(ValueError):
    pass


@dataclass(frozen=True)
class Schema:
    cat_cols: tuple[str, ...]
    cont_cols: tuple[str, ...]

    def __post_init__(self):
        names = list(self.cat_cols) + list(self.cont_cols)
        if len(names) != len(set(names)):
            raise DataError(f"schema columns not unique: {names}")
        for reserved in ("date", "series_id", "target"):
            if reserved in names:
                raise DataError(f"column name {reserved!r} is reserved")

    @property
    def header(self) -> list[str]:
        return ["date", "series_id", *self.cat_cols, *self.cont_cols, "target"]


@dataclass
class TabularDataset:
    """Row-sorted by (date, series_id); one row per (series, trading day)."""

    schema: Schema
    dates: np.ndarray    # ISO-8601 strings
    series: np.ndarray   # series_id strings
    cats: dict[str, np.ndarray]
    conts: np.ndarray    # (N, n_cont) float64, raw units
    target: np.ndarray   # (N,) float64, raw units

    def __len__(self) -> int:
        return len(self.dates)

    def subset(self, idx) -> "TabularDataset":
        return TabularDataset(
            schema=self.schema,
            dates=self.dates[idx],
            series=self.series[idx],
            cats={c: v[idx] for c, v in self.cats.items()},
            conts=self.conts[idx],
            target=self.target[idx],
        )


def _parse_iso_date(value: str, row_no: int) -> str:
    try:
        datetime.date.fromisoformat(value)
    except ValueError as exc:
        raise DataError(f"row {row_no}: bad date {value!r}: {exc}") from exc
    return value


def _sorted_dataset(schema, dates, series, cats, conts, targets, row_nos):
    order = np.lexsort((np.asarray(series), np.asarray(dates)))
    dates = np.asarray(dates)[order]
    series = np.asarray(series)[order]
    row_nos = np.asarray(row_nos)[order]
    key_seen: dict[tuple[str, str], int] = {}
    for i, key in enumerate(zip(series.tolist(), dates.tolist())):
        if key in key_seen:
            raise DataError(
                f"row {row_nos[i]}: duplicate (series_id, date) {key}, "
                f"first seen at row {key_seen[key]}"
            )
        key_seen[key] = int(row_nos[i])
    return TabularDataset(
        schema=schema,
        dates=dates,
        series=series,
        cats={c: np.asarray(vals)[order] for c, vals in cats.items()},
        conts=np.asarray(conts, dtype=np.float64)[order],
        target=np.asarray(targets, dtype=np.float64)[order],
    )


def load_csv(path, schema: Schema) -> TabularDataset:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        if header != schema.header:
            raise DataError(f"{path}: header {header} does not match schema {schema.header}")
        n_cat, n_cont = len(schema.cat_cols), len(schema.cont_cols)
        dates, series, conts, targets, row_nos = [], [], [], [], []
        cats: dict[str, list] = {c: [] for c in schema.cat_cols}
        dropped = 0
        for row_no, row in enumerate(reader, start=2):
            if len(row) != len(schema.header):
                raise DataError(f"row {row_no}: expected {len(schema.header)} fields, got {len(row)}")
            raw_conts = row[2 + n_cat : 2 + n_cat + n_cont]
            raw_target = row[-1]
            if "" in raw_conts or raw_target == "" or "" in row[2 : 2 + n_cat]:
                dropped += 1
                continue
            values = []
            for col, v in zip(list(schema.cont_cols) + ["target"], raw_conts + [raw_target]):
                try:
                    fv = float(v)
                except ValueError as exc:
                    raise DataError(f"row {row_no}: bad value {v!r} in column {col}") from exc
                if not np.isfinite(fv):
                    raise DataError(f"row {row_no}: non-finite value {v!r} in column {col}")
                values.append(fv)
            dates.append(_parse_iso_date(row[0], row_no))
            series.append(row[1])
            for c, v in zip(schema.cat_cols, row[2 : 2 + n_cat]):
                cats[c].append(v)
            conts.append(values[:-1])
            targets.append(values[-1])
            row_nos.append(row_no)
        if dropped:
            log.warning("%s: dropped %d rows with missing values", path, dropped)
        if not dates:
            raise DataError(f"{path}: no data rows")
    conts_arr = np.asarray(conts, dtype=np.float64).reshape(len(dates), n_cont)
    return _sorted_dataset(schema, dates, series, cats, conts_arr, targets, row_nos)


def write_csv(ds: TabularDataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(ds.schema.header)
        for i in range(len(ds)):
            row = [ds.dates[i], ds.series[i]]
            row += [ds.cats[c][i] for c in ds.schema.cat_cols]
            row += [repr(float(v)) for v in ds.conts[i]]
            row.append(repr(float(ds.target[i])))
            writer.writerow(row)


def chrono_split(ds: TabularDataset, valid_start: str, test_start: str):
    """Partition rows by date: train < valid_start <= valid < test_start <= test."""
    _parse_iso_date(valid_start, 0), _parse_iso_date(test_start, 0)
    if not valid_start < test_start:
        raise SplitError(f"valid_start {valid_start} must precede test_start {test_start}")
    train = ds.subset(ds.dates < valid_start)
    valid = ds.subset((ds.dates >= valid_start) & (ds.dates < test_start))
    test = ds.subset(ds.dates >= test_start)
    for name, part in (("train", train), ("valid", valid), ("test", test)):
        if len(part) == 0:
            raise SplitError(f"{name} partition is empty for boundaries "
                             f"({valid_start}, {test_start})")
    return train, valid, test


@dataclass(frozen=True)
class Vocab:
    """Training-split labels plus one reserved unknown slot at the end."""

    feature: str
    labels: tuple[str, ...]

    @property
    def cardinality(self) -> int:
        return len(self.labels) + 1

    @property
    def unk_index(self) -> int:
        return len(self.labels)

    def encode(self, values) -> np.ndarray:
        index = {lab: i for i, lab in enumerate(self.labels)}
        return np.array([index.get(v, self.unk_index) for v in values], dtype=np.int64)

    def decode(self, i: int) -> str:
        return self.labels[i] if i < len(self.labels) else UNK_LABEL


def fit_vocabs(train: TabularDataset) -> dict[str, Vocab]:
    return {
        col: Vocab(col, tuple(sorted(set(train.cats[col].tolist()))))
        for col in train.schema.cat_cols
    }


@dataclass(frozen=True)
class Scaler:
    """Column-wise standardization fitted on the training split; sigma floors at 1e-12."""

    columns: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, matrix: np.ndarray, columns) -> "Scaler":
        m = np.asarray(matrix, dtype=np.float64).reshape(len(matrix), len(columns))
        mean = m.mean(axis=0)
        std = np.maximum(m.std(axis=0), 1e-12)
        return cls(tuple(columns), mean, std)

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def inverse(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) * self.std + self.mean


@dataclass
class Windows:
    """Raw window index: sample row positions, histories in raw units, pad flags."""

    row_idx: np.ndarray   # (M,) positions into the source dataset
    history: np.ndarray   # (M, 1, T_w) float64 raw target units
    padded: np.ndarray    # (M,) bool


def make_windows(ds: TabularDataset, window: int) -> Windows:
    """One sample per (series, date) that has at least one prior observation.

    The history channel is the series' own target track shifted one row back
    (the value dated d is the target of the row before d). Samples with fewer
    than `window` priors are left-padded with the series' earliest available
    value and flagged.
    """
    if window < 1:
        raise DataError(f"window must be >= 1, got {window}")
    row_idx, histories, padded = [], [], []
    for sid in np.unique(ds.series):
        pos = np.flatnonzero(ds.series == sid)  # already date-sorted
        track = ds.target[pos]
        for i in range(1, len(pos)):
            lo = max(0, i - window)
            hist = track[lo:i]
            if len(hist) < window:
                hist = np.concatenate([np.full(window - len(hist), track[0]), hist])
                padded.append(True)
            else:
                padded.append(False)
            row_idx.append(pos[i])
            histories.append(hist)
    if not row_idx:
        raise DataError("no series has two or more rows; nothing to window")
    return Windows(
        row_idx=np.asarray(row_idx, dtype=np.int64),
        history=np.asarray(histories, dtype=np.float64)[:, None, :],
        padded=np.asarray(padded, dtype=bool),
    )


@dataclass
class WindowSet:
    """Model-ready samples: encoded categories, scaled continuous/history/target."""

    series: np.ndarray
    dates: np.ndarray
    cats: list[np.ndarray]
    conts: np.ndarray        # (N, C) float32, standardized
    history: np.ndarray      # (N, 1, T_w) float32, target-scaler units
    target: np.ndarray       # (N, 1) float32, target-scaler units
    padded: np.ndarray
    raw_target: np.ndarray   # (N,) float64, raw units
    raw_cats: dict[str, np.ndarray]

    def __len__(self) -> int:
        return len(self.target)

    def take(self, idx):
        return (
            [c[idx] for c in self.cats],
            self.conts[idx],
            self.history[idx],
            self.target[idx],
        )


@dataclass
class Pipeline:
    """Fitted preprocessing state plus the three windowed splits."""

    schema: Schema
    window: int
    vocabs: dict[str, Vocab]
    cont_scaler: Scaler
    target_scaler: Scaler
    train: WindowSet
    valid: WindowSet
    test: WindowSet


def _assemble(ds: TabularDataset, win: Windows, mask: np.ndarray, vocabs, cont_scaler,
              target_scaler) -> WindowSet:
    sel = win.row_idx[mask]
    hist = win.history[mask]
    tmean, tstd = target_scaler.mean[0], target_scaler.std[0]
    return WindowSet(
        series=ds.series[sel],
        dates=ds.dates[sel],
        cats=[vocabs[c].encode(ds.cats[c][sel]) for c in ds.schema.cat_cols],
        conts=cont_scaler.transform(ds.conts[sel]).astype(np.float32),
        history=((hist - tmean) / tstd).astype(np.float32),
        target=((ds.target[sel] - tmean) / tstd).astype(np.float32)[:, None],
        padded=win.padded[mask],
        raw_target=ds.target[sel],
        raw_cats={c: ds.cats[c][sel] for c in ds.schema.cat_cols},
    )


def prepare(ds: TabularDataset, valid_start: str, test_start: str, window: int) -> Pipeline:
    """Split, fit vocabularies and scalers on train rows, window the full series.

    Histories may reach back across a split boundary (past data is fair game);
    every history value predates the sample's target date.
    """
    train_rows, _, _ = chrono_split(ds, valid_start, test_start)
    vocabs = fit_vocabs(train_rows)
    cont_scaler = Scaler.fit(train_rows.conts, ds.schema.cont_cols)
    target_scaler = Scaler.fit(train_rows.target[:, None], ("target",))
    win = make_windows(ds, window)
    sample_dates = ds.dates[win.row_idx]
    parts = {}
    for name, mask in (
        ("train", sample_dates < valid_start),
        ("valid", (sample_dates >= valid_start) & (sample_dates < test_start)),
        ("test", sample_dates >= test_start),
    ):
        if not mask.any():
            raise SplitError(f"no windowed samples fall in the {name} partition")
        parts[name] = _assemble(ds, win, mask, vocabs, cont_scaler, target_scaler)
    return Pipeline(
        schema=ds.schema,
        window=window,
        vocabs=vocabs,
        cont_scaler=cont_scaler,
        target_scaler=target_scaler,
        train=parts["train"],
        valid=parts["valid"],
        test=parts["test"],
    )
