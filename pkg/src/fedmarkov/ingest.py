"""Hourly air-quality ingestion: fill, deseasonalize, normalize, window.

The pipeline turns raw per-station hourly CSVs (UCI multi-site air-quality
schema) into a normalized regression dataset:

1. load_csv      - schema and timestamp validation, explicit NA markers;
2. fill_missing  - previous-calendar-month mean per field, falling back to
                   the preceding-history mean and then to 0;
3. deseasonalize - subtract the additive (calendar month, hour-of-day)
                   climatology fitted on the training period only;
4. normalize_and_select - drop PM10 and wd, z-score the 9 remaining
                   covariates and the PM2.5 target with training statistics.

The training period is the first `training_months` calendar months of the
series (36 in the experiments; the remaining months are test data). All
fitted statistics depend only on training rows, so there is no leakage.

Per-station pipelines are independent and may run concurrently; a Dataset
is immutable after construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import (
    ConstantColumnError,
    InvalidParameterError,
    OrderingError,
    SchemaError,
    UndefinedAutocorrelationError,
)
from .rng import PARTITION, substream

SCHEMA = [
    "No", "year", "month", "day", "hour",
    "PM2.5", "PM10", "SO2", "NO2", "CO", "O3",
    "TEMP", "PRES", "DEWP", "RAIN", "wd", "WSPM", "station",
]
NUMERIC_FIELDS = [
    "PM2.5", "PM10", "SO2", "NO2", "CO", "O3",
    "TEMP", "PRES", "DEWP", "RAIN", "WSPM",
]
FEATURE_COLUMNS = ["SO2", "NO2", "CO", "O3", "TEMP", "PRES", "DEWP", "RAIN", "WSPM"]
TARGET_COLUMN = "PM2.5"
TRAINING_MONTHS = 36


@dataclass
class StationSeries:
    """One station's hourly records, timestamp-validated.

    `frame` holds a `timestamp` column plus the numeric fields and `wd`;
    `meta` accumulates pipeline provenance (fill counts, climatology,
    normalization statistics).
    """

    station: str
    frame: pd.DataFrame
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.frame)

    def month_index(self) -> np.ndarray:
        """0-based calendar-month offset of every row from the first row."""
        ts = self.frame["timestamp"]
        first = ts.iloc[0]
        return (
            (ts.dt.year - first.year) * 12 + (ts.dt.month - first.month)
        ).to_numpy()


@dataclass(frozen=True)
class Dataset:
    """Normalized, seasonality-adjusted regression data for one station."""

    station: str
    features: np.ndarray  # (n, 9)
    targets: np.ndarray  # (n,)
    timestamps: np.ndarray  # (n,) datetime64
    month_index: np.ndarray  # (n,) 0-based
    stats: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[1] != len(FEATURE_COLUMNS):
            raise InvalidParameterError(
                f"features must have {len(FEATURE_COLUMNS)} columns"
            )

    def __len__(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class ClientWindow:
    """A contiguous month range of one station, inside the training period."""

    station: str
    start_month: int  # 1-based
    n_months: int

    def __post_init__(self):
        if not (1 <= self.n_months <= TRAINING_MONTHS):
            raise InvalidParameterError(
                f"n_months must be in [1, {TRAINING_MONTHS}]"
            )
        if not (1 <= self.start_month <= TRAINING_MONTHS - self.n_months + 1):
            raise InvalidParameterError(
                "window must lie entirely inside the training period"
            )


def load_csv(path) -> StationSeries:
    """Parse one station file, validating schema and hourly timestamps."""
    try:
        frame = pd.read_csv(path, na_values=["NA"], keep_default_na=True)
    except pd.errors.EmptyDataError as exc:
        raise SchemaError(f"{path}: empty file") from exc
    header = list(frame.columns)
    if header != SCHEMA:
        offending = next(
            (f"expected {e!r}, found {g!r}"
             for e, g in zip(SCHEMA, header + [None] * len(SCHEMA)) if e != g),
            f"expected {len(SCHEMA)} columns, found {len(header)}",
        )
        raise SchemaError(f"{path}: header mismatch ({offending})")

    stations = frame["station"].dropna().unique()
    if len(stations) != 1:
        raise SchemaError(f"{path}: expected exactly one station, found {list(stations)}")
    station = str(stations[0])

    ts = pd.to_datetime(frame[["year", "month", "day", "hour"]])
    diffs = ts.diff().iloc[1:]
    if (diffs <= pd.Timedelta(0)).any():
        bad = ts[1:][(diffs <= pd.Timedelta(0)).to_numpy()].iloc[0]
        raise OrderingError(f"{path}: duplicated or non-monotone timestamp at {bad}")
    if (diffs != pd.Timedelta(hours=1)).any():
        bad = ts[1:][(diffs != pd.Timedelta(hours=1)).to_numpy()].iloc[0]
        raise OrderingError(f"{path}: non-hourly spacing before {bad}")

    out = frame[NUMERIC_FIELDS + ["wd"]].copy()
    for col in NUMERIC_FIELDS:
        out[col] = pd.to_numeric(out[col], errors="raise")
    out.insert(0, "timestamp", ts)
    out.reset_index(drop=True, inplace=True)
    return StationSeries(station=station, frame=out)


def fill_missing(series: StationSeries) -> StationSeries:
    """Replace each missing numeric cell by the previous-calendar-month mean.

    Means are taken over originally observed values only. If the previous
    month has none, the mean of all preceding history is used; failing
    that, 0. Running the operation twice equals running it once (the first
    pass leaves no missing numeric cells).
    """
    frame = series.frame.copy()
    periods = frame["timestamp"].dt.to_period("M")
    unique_periods = periods.unique()
    fill_counts = {}
    for col in NUMERIC_FIELDS:
        values = frame[col]
        observed = values.notna()
        if observed.all():
            fill_counts[col] = 0
            continue
        sums = values.where(observed, 0.0).groupby(periods).sum()
        counts = observed.groupby(periods).sum()
        cum_sums = sums.cumsum()
        cum_counts = counts.cumsum()
        fills = {}
        for per in unique_periods:
            prev = per - 1
            if prev in counts.index and counts[prev] > 0:
                fills[per] = sums[prev] / counts[prev]
                continue
            hist_idx = counts.index < per
            hist_count = cum_counts[hist_idx].iloc[-1] if hist_idx.any() else 0
            if hist_count > 0:
                fills[per] = cum_sums[hist_idx].iloc[-1] / hist_count
            else:
                fills[per] = 0.0
        missing = ~observed
        frame.loc[missing, col] = periods[missing].map(fills).astype(np.float64)
        fill_counts[col] = int(missing.sum())
    meta = dict(series.meta)
    meta["fill_counts"] = fill_counts
    return StationSeries(station=series.station, frame=frame, meta=meta)


def deseasonalize(
    series: StationSeries, training_months: int = TRAINING_MONTHS
) -> StationSeries:
    """Subtract the additive (calendar month, hour-of-day) climatology.

    The climatology is the per-field mean over all *training* rows sharing
    (month, hour); it is estimated on the first `training_months` months
    only and subtracted from every row. Cells never seen in training fall
    back to the field's training mean.
    """
    frame = series.frame.copy()
    month = frame["timestamp"].dt.month
    hour = frame["timestamp"].dt.hour
    train = series.month_index() < training_months
    if not train.any():
        raise InvalidParameterError("training period contains no rows")
    climatology = {}
    for col in NUMERIC_FIELDS:
        values = frame[col]
        grouped = values[train].groupby([month[train], hour[train]]).mean()
        fallback = float(values[train].mean())
        cells = pd.MultiIndex.from_arrays([month, hour])
        offsets = grouped.reindex(cells).fillna(fallback).to_numpy()
        frame[col] = values.to_numpy() - offsets
        climatology[col] = {
            f"{m}-{h}": float(v) for (m, h), v in grouped.items()
        }
    meta = dict(series.meta)
    meta["climatology"] = climatology
    meta["training_months"] = training_months
    return StationSeries(station=series.station, frame=frame, meta=meta)


def normalize_and_select(
    series: StationSeries, training_months: int = TRAINING_MONTHS
) -> Dataset:
    """Drop PM10 and wd, z-score the rest with training statistics."""
    frame = series.frame
    train = series.month_index() < training_months
    stats = {"mean": {}, "std": {}, "training_months": training_months}
    columns = FEATURE_COLUMNS + [TARGET_COLUMN]
    normalized = {}
    for col in columns:
        values = frame[col].to_numpy(dtype=np.float64)
        if np.isnan(values).any():
            raise InvalidParameterError(
                f"column {col!r} still has missing values; run fill_missing first"
            )
        mean = float(values[train].mean())
        std = float(values[train].std())  # population std (ddof=0)
        if std == 0.0:
            raise ConstantColumnError(col)
        normalized[col] = (values - mean) / std
        stats["mean"][col] = mean
        stats["std"][col] = std
    stats.update(series.meta)
    return Dataset(
        station=series.station,
        features=np.column_stack([normalized[col] for col in FEATURE_COLUMNS]),
        targets=normalized[TARGET_COLUMN],
        timestamps=frame["timestamp"].to_numpy(),
        month_index=series.month_index(),
        stats=stats,
    )


def run_pipeline(path, training_months: int = TRAINING_MONTHS) -> Dataset:
    """load -> fill -> deseasonalize -> normalize for one station file."""
    series = load_csv(path)
    series = fill_missing(series)
    series = deseasonalize(series, training_months)
    return normalize_and_select(series, training_months)


def partition_clients(
    stations: list[str], n_months: int, count: int, seed: int
) -> list[ClientWindow]:
    """Uniform (station, start_month) draws, windows inside months 1..36."""
    if count < 1:
        raise InvalidParameterError("client count must be >= 1")
    if not stations:
        raise InvalidParameterError("at least one station is required")
    if n_months > TRAINING_MONTHS:
        raise InvalidParameterError(
            f"n_months must be <= {TRAINING_MONTHS}, got {n_months}"
        )
    if n_months < 1:
        raise InvalidParameterError("n_months must be >= 1")
    gen = substream(seed, PARTITION)
    max_start = TRAINING_MONTHS - n_months + 1
    windows = []
    for _ in range(count):
        station = stations[int(gen.integers(len(stations)))]
        start = 1 + int(gen.integers(max_start))
        windows.append(ClientWindow(station=station, start_month=start, n_months=n_months))
    return windows


def window_slice(dataset: Dataset, window: ClientWindow) -> tuple[np.ndarray, np.ndarray]:
    """(features, targets) of the contiguous row range a window covers."""
    if dataset.station != window.station:
        raise InvalidParameterError(
            f"window station {window.station!r} does not match dataset "
            f"{dataset.station!r}"
        )
    lo = window.start_month - 1
    hi = lo + window.n_months
    mask = (dataset.month_index >= lo) & (dataset.month_index < hi)
    if not mask.any():
        raise InvalidParameterError("window covers no rows of this dataset")
    return dataset.features[mask], dataset.targets[mask]


def autocorrelation(values: np.ndarray, max_lag: int) -> np.ndarray:
    """rho(l) for l = 0..max_lag; rho(0) = 1."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1 or values.size <= max_lag:
        raise InvalidParameterError("series length must exceed max_lag")
    centered = values - values.mean()
    denom = float(centered @ centered)
    if denom == 0.0:
        raise UndefinedAutocorrelationError("autocorrelation of a constant series")
    out = np.empty(max_lag + 1)
    out[0] = 1.0
    for lag in range(1, max_lag + 1):
        out[lag] = float(centered[:-lag] @ centered[lag:]) / denom
    return out


def dataset_to_csv(dataset: Dataset, path) -> None:
    """timestamp, 9 feature columns, target."""
    frame = pd.DataFrame(dataset.features, columns=FEATURE_COLUMNS)
    frame.insert(0, "timestamp", pd.DatetimeIndex(dataset.timestamps).strftime("%Y-%m-%d %H:%M:%S"))
    frame[TARGET_COLUMN] = dataset.targets
    frame.to_csv(path, index=False)
