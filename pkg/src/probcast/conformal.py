"""Distribution-free prediction intervals around any point forecaster.

Every delivery hour keeps a rolling window of the most recent absolute
forecast errors.  Quantiles of the window translate a point forecast
into a symmetric interval: for percentile q below 50 the forecast minus
the (1 - 2q/100) score quantile, from 50 up the forecast plus the
(2q/100 - 1) score quantile.  Score quantiles use the conservative rank
ceil(alpha * (n + 1)) order statistic clamped to [1, n], which carries
the split-calibration coverage guarantee under exchangeability.

At q = 50 the formula degenerates to the point forecast plus the
smallest score in the window, not the forecast itself; that small upward
shift is intentional and kept as specified.
"""

from __future__ import annotations

import numpy as np

from probcast.distribution import PERCENTILES, QuantileForecast
from probcast.errors import ConfigError, DataError

DEFAULT_N_CAL = 182


def nonconformity(point, actual):
    """Absolute forecast error, elementwise."""
    return np.abs(np.asarray(point, dtype=float) - np.asarray(actual, dtype=float))


class ScoreWindow:
    """Most recent nonconformity scores for one hour, oldest first."""

    def __init__(self, hour: int, capacity: int, scores=()):
        if not 0 <= hour < 24:
            raise ConfigError(f"hour must be in 0..23, got {hour}")
        if capacity < 1:
            raise ConfigError("capacity must be positive")
        scores = np.asarray(scores, dtype=float).ravel()
        if np.any(scores < 0) or not np.all(np.isfinite(scores)):
            raise DataError("scores must be finite and non-negative")
        if scores.size > capacity:
            raise DataError(f"{scores.size} scores exceed capacity {capacity}")
        self.hour = hour
        self.capacity = int(capacity)
        self.scores = scores

    def __len__(self):
        return self.scores.size

    def add(self, score: float) -> None:
        """Append one score in place, evicting the oldest beyond capacity."""
        score = float(score)
        if not np.isfinite(score) or score < 0:
            raise DataError(f"score must be finite and non-negative, got {score}")
        self.scores = np.append(self.scores, score)[-self.capacity :]


def roll(window: ScoreWindow, new_score: float) -> ScoreWindow:
    """Functional form of ScoreWindow.add: returns the advanced window."""
    out = ScoreWindow(window.hour, window.capacity, window.scores)
    out.add(new_score)
    return out


def empirical_quantile(scores, alpha: float) -> float:
    """Order statistic at rank ceil(alpha * (n + 1)), clamped to [1, n]."""
    s = np.sort(np.asarray(scores, dtype=float).ravel())
    n = s.size
    if n == 0:
        raise DataError("empty score window")
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must be in [0, 1], got {alpha}")
    rank = int(np.ceil(alpha * (n + 1)))
    return float(s[min(max(rank, 1), n) - 1])


def conformal_quantiles(point: float, window: ScoreWindow, percentiles=PERCENTILES) -> np.ndarray:
    """The 99 conformal quantiles around one point forecast."""
    s = np.sort(window.scores)
    n = s.size
    if n == 0:
        raise DataError("score window is empty; calibrate before forecasting")
    q = np.asarray(percentiles, dtype=float)
    if np.any(q <= 0) or np.any(q >= 100):
        raise ConfigError("percentiles must lie strictly between 0 and 100")
    alphas = np.where(q < 50.0, 1.0 - q / 50.0, q / 50.0 - 1.0)
    ranks = np.clip(np.ceil(alphas * (n + 1)).astype(int), 1, n)
    spread = s[ranks - 1]
    return float(point) + np.where(q < 50.0, -spread, spread)


def conformalize(
    calibration_points,
    calibration_actuals,
    test_points,
    test_actuals,
    test_dates,
    n_cal: int = DEFAULT_N_CAL,
) -> QuantileForecast:
    """Walk the test span, conformalizing a point forecast day by day.

    Windows are seeded per hour with the last n_cal calibration scores;
    each test day is forecast from the current windows before that day's
    realized errors are appended, matching day-ahead information flow.
    """
    cal_p = np.asarray(calibration_points, dtype=float)
    cal_y = np.asarray(calibration_actuals, dtype=float)
    tst_p = np.asarray(test_points, dtype=float)
    tst_y = np.asarray(test_actuals, dtype=float)
    if cal_p.shape != cal_y.shape or cal_p.ndim != 2 or cal_p.shape[1] != 24:
        raise DataError("calibration arrays must both be (days, 24)")
    if tst_p.shape != tst_y.shape or tst_p.ndim != 2 or tst_p.shape[1] != 24:
        raise DataError("test arrays must both be (days, 24)")
    if cal_p.shape[0] == 0:
        raise DataError("needs at least one calibration day")
    if len(test_dates) != tst_p.shape[0]:
        raise DataError("test_dates length must match test rows")
    scores = nonconformity(cal_p, cal_y)
    windows = [ScoreWindow(h, n_cal, scores[-n_cal:, h]) for h in range(24)]
    values = np.empty((tst_p.shape[0], 24, len(PERCENTILES)))
    for d in range(tst_p.shape[0]):
        for h in range(24):
            values[d, h] = conformal_quantiles(tst_p[d, h], windows[h])
        day_scores = nonconformity(tst_p[d], tst_y[d])
        for h in range(24):
            windows[h].add(day_scores[h])
    return QuantileForecast(list(test_dates), values)
