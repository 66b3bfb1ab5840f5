"""Market data ingestion, clock repair, feature construction, and splits.

The raw input is an hourly CSV of day-ahead prices plus day-ahead load
and renewable generation forecasts.  Processing steps:

1. ingest_csv: parse and validate; unparseable cells become flagged gaps.
2. normalize_clock: repair daylight saving anomalies so every day carries
   exactly 24 hourly records (the short spring day is filled with the
   mean of the two neighbouring hours, the doubled autumn hour is
   averaged into one record).
3. build_features: one row per day with 151 inputs and 24 targets.  The
   inputs are the 24 hourly prices of days d-1, d-2, d-3 and d-7 (96
   lagged values), the 24 hourly load forecasts and 24 hourly renewable
   forecasts for day d, and 7 weekday indicator columns where Monday maps
   to (1, 0, 0, 0, 0, 0, 0).  Days touched by any missing value are
   dropped whole.
4. split_by_dates / fit_standardizer: label train, validation and test
   rows by date range and standardize with training statistics only
   (population standard deviation).
"""

from __future__ import annotations

import csv
from bisect import bisect_left
from dataclasses import dataclass, field, replace
from datetime import date, datetime, timedelta
from zoneinfo import ZoneInfo

import numpy as np

from probcast.errors import ConfigError, DataError

N_HOURS = 24
N_FEATURES = 151
PRICE_LAG_DAYS = (1, 2, 3, 7)
LOAD_OFFSET = 96
RENEWABLE_OFFSET = 120
WEEKDAY_OFFSET = 144
MIN_HISTORY_DAYS = 7

DEFAULT_TIMEZONE = "Europe/Berlin"
NO_TIMEZONE = "none"

DEFAULT_SCHEMA = {
    "timestamp": "timestamp",
    "price": "price",
    "load_forecast": "load_forecast",
    "renewable_forecast": "renewable_forecast",
}

FIELD_NAMES = ("price", "load_forecast", "renewable_forecast")

SPLIT_TRAIN = "train"
SPLIT_VALIDATION = "validation"
SPLIT_TEST = "test"
SPLITS = (SPLIT_TRAIN, SPLIT_VALIDATION, SPLIT_TEST)


@dataclass(frozen=True)
class HourlyRecord:
    timestamp: datetime
    price: float
    load_forecast: float
    renewable_forecast: float


@dataclass
class MarketSeries:
    """Ordered hourly records plus the clock policy they were read under.

    gaps lists (timestamp, field) pairs whose values could not be parsed
    or were absent; the values themselves are stored as NaN so nothing is
    silently dropped before feature construction.
    """

    records: list
    timezone_rule: str = DEFAULT_TIMEZONE
    gaps: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)


def _wall_time(text: str) -> datetime:
    text = text.strip().replace("Z", "+00:00")
    try:
        ts = datetime.fromisoformat(text)
    except ValueError as exc:
        raise DataError(f"unparseable timestamp {text!r}") from exc
    # offset-aware stamps are taken at face value as local wall time
    return ts.replace(tzinfo=None)


def _is_ambiguous(ts: datetime, tz) -> bool:
    return ts.replace(tzinfo=tz, fold=0).utcoffset() > ts.replace(tzinfo=tz, fold=1).utcoffset()


def _is_skipped(ts: datetime, tz) -> bool:
    return ts.replace(tzinfo=tz, fold=0).utcoffset() < ts.replace(tzinfo=tz, fold=1).utcoffset()


def ingest_csv(path, schema=None, timezone_rule: str = DEFAULT_TIMEZONE) -> MarketSeries:
    """Read an hourly market CSV into a MarketSeries.

    schema maps the logical names (timestamp, price, load_forecast,
    renewable_forecast) to the file's column headers; omitted entries use
    the logical name itself.  Unparseable numeric cells are recorded as
    gaps.  Timestamps must be non-decreasing, and a repeated wall time is
    tolerated only for the doubled autumn changeover hour (at most two
    records).
    """
    colmap = {**DEFAULT_SCHEMA, **(schema or {})}
    tz = None if timezone_rule == NO_TIMEZONE else ZoneInfo(timezone_rule)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    records: list = []
    gaps: list = []
    with fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [colmap[k] for k in colmap if colmap[k] not in header]
        if missing:
            raise DataError(f"{path}: missing columns {missing}")
        prev = None
        dup_count = 0
        for line, row in enumerate(reader, start=2):
            ts = _wall_time(row[colmap["timestamp"]])
            if prev is not None:
                if ts < prev:
                    raise DataError(f"{path}:{line}: non-monotone timestamp {ts}")
                if ts == prev:
                    dup_count += 1
                    ambiguous = tz is not None and _is_ambiguous(ts, tz)
                    if not ambiguous or dup_count > 1:
                        raise DataError(f"{path}:{line}: duplicate timestamp {ts}")
                else:
                    dup_count = 0
            prev = ts
            values = {}
            for fieldname in FIELD_NAMES:
                raw = (row[colmap[fieldname]] or "").strip()
                try:
                    values[fieldname] = float(raw)
                except ValueError:
                    values[fieldname] = float("nan")
                    gaps.append((ts, fieldname))
            records.append(HourlyRecord(ts, **values))
    return MarketSeries(records, timezone_rule, gaps)


def _record_mean(ts: datetime, recs) -> HourlyRecord:
    vals = {}
    for name in FIELD_NAMES:
        vals[name] = float(np.mean([getattr(r, name) for r in recs]))
    return HourlyRecord(ts, **vals)


def normalize_clock(series: MarketSeries) -> MarketSeries:
    """Return a series with exactly 24 records on every covered day.

    Under a daylight-saving timezone rule the skipped spring hour is
    filled with the mean of its two neighbouring hours and the doubled
    autumn hour is collapsed to the mean of its two records.  Hours absent
    for any other reason become NaN records and are reported as gaps.
    """
    if not series.records:
        return MarketSeries([], series.timezone_rule, list(series.gaps))
    tz = None if series.timezone_rule == NO_TIMEZONE else ZoneInfo(series.timezone_rule)

    by_slot: dict = {}
    for rec in series.records:
        by_slot.setdefault(rec.timestamp.replace(minute=0, second=0, microsecond=0), []).append(rec)

    first_day = series.records[0].timestamp.date()
    last_day = series.records[-1].timestamp.date()
    out: list = []
    gaps = list(series.gaps)
    fill_later: list = []
    day = first_day
    while day <= last_day:
        for hour in range(N_HOURS):
            ts = datetime(day.year, day.month, day.day, hour)
            recs = by_slot.get(ts, [])
            if tz is not None and _is_skipped(ts, tz):
                if recs:
                    raise DataError(f"record at nonexistent local time {ts}")
                fill_later.append(len(out))
                out.append(None)
            elif tz is not None and _is_ambiguous(ts, tz):
                if len(recs) > 2:
                    raise DataError(f"more than two records at doubled hour {ts}")
                if not recs:
                    out.append(HourlyRecord(ts, float("nan"), float("nan"), float("nan")))
                    gaps.extend((ts, name) for name in FIELD_NAMES)
                elif len(recs) == 1:
                    out.append(replace(recs[0], timestamp=ts))
                else:
                    out.append(_record_mean(ts, recs))
            else:
                if len(recs) > 1:
                    raise DataError(f"duplicate records at {ts}")
                if recs:
                    out.append(replace(recs[0], timestamp=ts))
                else:
                    out.append(HourlyRecord(ts, float("nan"), float("nan"), float("nan")))
                    gaps.extend((ts, name) for name in FIELD_NAMES)
        day += timedelta(days=1)

    for i in fill_later:
        ts = datetime.combine(first_day, datetime.min.time()) + timedelta(hours=i)
        neighbours = [out[j] for j in (i - 1, i + 1) if 0 <= j < len(out) and out[j] is not None]
        if neighbours:
            out[i] = _record_mean(ts, neighbours)
        else:
            out[i] = HourlyRecord(ts, float("nan"), float("nan"), float("nan"))
            gaps.extend((ts, name) for name in FIELD_NAMES)
    return MarketSeries(out, series.timezone_rule, gaps)


def day_matrices(series: MarketSeries):
    """(dates, price, load, renewable) day-by-hour matrices.

    Requires a clock-normalized series (exactly 24 records per day).
    """
    n = len(series.records)
    if n == 0:
        raise DataError("empty series")
    if n % N_HOURS != 0:
        raise DataError("series is not clock-normalized (not a multiple of 24 records)")
    dates = []
    for i in range(0, n, N_HOURS):
        block = series.records[i : i + N_HOURS]
        if any(r.timestamp.hour != h for h, r in enumerate(block)):
            raise DataError("series is not clock-normalized (hours out of order)")
        dates.append(block[0].timestamp.date())
    price = np.array([[r.price for r in series.records[i : i + N_HOURS]] for i in range(0, n, N_HOURS)])
    load = np.array([[r.load_forecast for r in series.records[i : i + N_HOURS]] for i in range(0, n, N_HOURS)])
    renew = np.array(
        [[r.renewable_forecast for r in series.records[i : i + N_HOURS]] for i in range(0, n, N_HOURS)]
    )
    return dates, price, load, renew


def daily_price_table(series: MarketSeries) -> dict:
    """date -> 24-hour price vector, for the calendar-naive baseline."""
    dates, price, _, _ = day_matrices(series)
    return {d: price[i] for i, d in enumerate(dates)}


@dataclass
class DailyRow:
    day: date
    features: np.ndarray
    targets: np.ndarray


@dataclass
class FeatureDataset:
    """Per-day rows: 151 features, 24 targets, optional split labels."""

    dates: list
    features: np.ndarray
    targets: np.ndarray
    split: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float).reshape(-1, N_FEATURES)
        self.targets = np.asarray(self.targets, dtype=float).reshape(-1, N_HOURS)
        n = len(self.dates)
        if self.features.shape[0] != n or self.targets.shape[0] != n:
            raise DataError("row count mismatch between dates, features, and targets")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise DataError("dataset dates must be strictly increasing")
        if self.split is not None:
            self.split = np.asarray(self.split, dtype=object)
            if self.split.shape != (n,):
                raise DataError("split labels must align with rows")

    def __len__(self) -> int:
        return len(self.dates)

    def index_of(self, day: date) -> int:
        i = bisect_left(self.dates, day)
        if i == len(self.dates) or self.dates[i] != day:
            raise DataError(f"day {day} not present in dataset")
        return i

    def indices(self, split_name: str) -> np.ndarray:
        if self.split is None:
            raise DataError("dataset has no split labels")
        return np.flatnonzero(self.split == split_name)

    def row(self, i: int) -> DailyRow:
        return DailyRow(self.dates[i], self.features[i], self.targets[i])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            header = (
                ["date"]
                + [f"f{i:03d}" for i in range(N_FEATURES)]
                + [f"t{h:02d}" for h in range(N_HOURS)]
                + ["split"]
            )
            writer.writerow(header)
            for i, d in enumerate(self.dates):
                label = "" if self.split is None else self.split[i]
                writer.writerow(
                    [d.isoformat()]
                    + [repr(float(v)) for v in self.features[i]]
                    + [repr(float(v)) for v in self.targets[i]]
                    + [label]
                )

    @classmethod
    def from_csv(cls, path) -> "FeatureDataset":
        dates: list = []
        feats: list = []
        tgts: list = []
        labels: list = []
        try:
            fh = open(path, newline="")
        except OSError as exc:
            raise DataError(f"cannot open {path}: {exc}") from exc
        with fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or len(header) != 1 + N_FEATURES + N_HOURS + 1:
                raise DataError(f"{path}: not a feature dataset file")
            for rec in reader:
                dates.append(datetime.strptime(rec[0], "%Y-%m-%d").date())
                feats.append([float(v) for v in rec[1 : 1 + N_FEATURES]])
                tgts.append([float(v) for v in rec[1 + N_FEATURES : 1 + N_FEATURES + N_HOURS]])
                labels.append(rec[-1])
        features = np.array(feats) if feats else np.empty((0, N_FEATURES))
        targets = np.array(tgts) if tgts else np.empty((0, N_HOURS))
        split = np.array(labels, dtype=object) if labels and any(labels) else None
        return cls(dates, features, targets, split)


def weekday_dummies(day: date) -> np.ndarray:
    out = np.zeros(7)
    out[day.weekday()] = 1.0
    return out


def build_features(series: MarketSeries) -> FeatureDataset:
    """Assemble the per-day feature rows from a clock-normalized series."""
    dates, price, load, renew = day_matrices(series)
    if len(dates) < MIN_HISTORY_DAYS + 1:
        raise DataError(
            f"series spans {len(dates)} days; at least {MIN_HISTORY_DAYS + 1} are needed for the lag window"
        )
    kept_dates = []
    rows = []
    targets = []
    for i in range(MIN_HISTORY_DAYS, len(dates)):
        feats = np.concatenate(
            [price[i - lag] for lag in PRICE_LAG_DAYS]
            + [load[i], renew[i], weekday_dummies(dates[i])]
        )
        tgt = price[i]
        if np.all(np.isfinite(feats)) and np.all(np.isfinite(tgt)):
            kept_dates.append(dates[i])
            rows.append(feats)
            targets.append(tgt)
    features = np.array(rows) if rows else np.empty((0, N_FEATURES))
    tgt_arr = np.array(targets) if targets else np.empty((0, N_HOURS))
    return FeatureDataset(kept_dates, features, tgt_arr)


def split_by_dates(dataset: FeatureDataset, train, validation, test) -> FeatureDataset:
    """Label rows by inclusive date ranges; rows outside all ranges drop.

    The three (start, end) ranges must be internally ordered and must not
    overlap; train must precede validation, validation precede test.
    """
    ranges = {SPLIT_TRAIN: train, SPLIT_VALIDATION: validation, SPLIT_TEST: test}
    for name, (a, b) in ranges.items():
        if a > b:
            raise ConfigError(f"{name} range is reversed: {a} > {b}")
    if not (train[1] < validation[0] and validation[1] < test[0]):
        raise ConfigError("split ranges must be ordered train < validation < test without overlap")
    keep = []
    labels = []
    for i, d in enumerate(dataset.dates):
        for name, (a, b) in ranges.items():
            if a <= d <= b:
                keep.append(i)
                labels.append(name)
                break
    keep_arr = np.array(keep, dtype=int)
    return FeatureDataset(
        [dataset.dates[i] for i in keep],
        dataset.features[keep_arr] if keep else np.empty((0, N_FEATURES)),
        dataset.targets[keep_arr] if keep else np.empty((0, N_HOURS)),
        np.array(labels, dtype=object) if labels else np.empty((0,), dtype=object),
    )


@dataclass
class Standardizer:
    """Column-wise affine transform fitted on training rows only."""

    feature_mean: np.ndarray
    feature_std: np.ndarray
    target_mean: np.ndarray
    target_std: np.ndarray

    def transform_features(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.feature_mean) / self.feature_std

    def inverse_features(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) * self.feature_std + self.feature_mean

    def transform_targets(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.target_mean) / self.target_std

    def inverse_targets(self, y: np.ndarray) -> np.ndarray:
        return np.asarray(y, dtype=float) * self.target_std + self.target_mean

    def transform_dataset(self, dataset: FeatureDataset) -> FeatureDataset:
        return FeatureDataset(
            list(dataset.dates),
            self.transform_features(dataset.features),
            self.transform_targets(dataset.targets),
            None if dataset.split is None else dataset.split.copy(),
        )


def fit_standardizer(dataset: FeatureDataset) -> Standardizer:
    """Means and population standard deviations over the training rows."""
    idx = dataset.indices(SPLIT_TRAIN)
    if idx.size == 0:
        raise DataError("no training rows to fit the standardizer on")
    fx = dataset.features[idx]
    ty = dataset.targets[idx]
    fmean, fstd = fx.mean(axis=0), fx.std(axis=0)
    tmean, tstd = ty.mean(axis=0), ty.std(axis=0)
    for arr, kind in ((fstd, "feature"), (tstd, "target")):
        zero = np.flatnonzero(arr == 0)
        if zero.size:
            raise DataError(f"zero variance in {kind} column(s) {zero.tolist()} on training rows")
    return Standardizer(fmean, fstd, tmean, tstd)
