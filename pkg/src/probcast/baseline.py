"""Calendar-naive point model and its historical-simulation distribution.

The naive model copies prices from a reference day: Tuesday through
Friday reuse the previous day, while Monday, Saturday and Sunday reuse
the same weekday one week back.  Historical simulation turns that point
forecast into a Gaussian predictive distribution whose mean and standard
deviation come from the naive model's own errors on a chosen split, so
the interval width is the same for every day and hour.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date, timedelta

import numpy as np

from probcast.data import MarketSeries, daily_price_table
from probcast.distribution import PERCENTILES, PointForecast, gaussian_percentiles
from probcast.errors import ConfigError, DataError

MIN_ERRORS = 30
SAME_WEEKDAY_LAG = 7
PREVIOUS_DAY_WEEKDAYS = (1, 2, 3, 4)


def reference_day(day: date) -> date:
    """The day whose prices the naive model copies."""
    lag = 1 if day.weekday() in PREVIOUS_DAY_WEEKDAYS else SAME_WEEKDAY_LAG
    return day - timedelta(days=lag)


def naive_forecast(series, day: date) -> np.ndarray:
    """24 hourly prices copied from the reference day.

    series is a MarketSeries or a date -> price-vector mapping.
    """
    table = daily_price_table(series) if isinstance(series, MarketSeries) else series
    ref = reference_day(day)
    if ref not in table:
        raise DataError(f"reference day {ref} missing from series (forecast day {day})")
    return np.array(table[ref], dtype=float)


def naive_point_forecasts(series, days) -> PointForecast:
    """Stacked naive forecasts for an ordered span of days."""
    table = daily_price_table(series) if isinstance(series, MarketSeries) else series
    days = list(days)
    values = np.empty((len(days), 24))
    for i, day in enumerate(days):
        values[i] = naive_forecast(table, day)
    return PointForecast(days, values)


@dataclass(frozen=True)
class HistoricalSimulation:
    error_mean: float
    error_std: float
    source_split: str

    def __post_init__(self):
        if not self.error_std > 0:
            raise ConfigError("error_std must be positive")


def fit_hs(errors, source_split: str = "train") -> HistoricalSimulation:
    """Gaussian distribution of the naive model's forecast errors.

    errors are actual minus forecast, pooled across hours; the standard
    deviation is the population value.
    """
    e = np.asarray(errors, dtype=float).ravel()
    if e.size < MIN_ERRORS:
        raise DataError(f"need at least {MIN_ERRORS} errors, got {e.size}")
    if not np.all(np.isfinite(e)):
        raise DataError("errors must be finite")
    std = float(np.std(e))
    if std == 0.0:
        raise DataError("errors have zero variance")
    return HistoricalSimulation(float(np.mean(e)), std, source_split)


def fit_hs_per_hour(errors, source_split: str = "train"):
    """One HistoricalSimulation per delivery hour; errors are (days, 24)."""
    e = np.asarray(errors, dtype=float)
    if e.ndim != 2 or e.shape[1] != 24:
        raise DataError("per-hour errors must be (days, 24)")
    return [fit_hs(e[:, h], source_split) for h in range(24)]


def hs_quantiles(point, hs: HistoricalSimulation, grid=PERCENTILES) -> np.ndarray:
    """Quantile curve(s): point + error_mean + error_std * ndtri(q/100).

    point may be a scalar or any array; the grid axis is appended.
    """
    point = np.asarray(point, dtype=float)
    return gaussian_percentiles(point + hs.error_mean, np.full_like(point, hs.error_std), grid)
