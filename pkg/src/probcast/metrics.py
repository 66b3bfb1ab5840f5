"""Point and probabilistic forecast evaluation, plus pairwise skill tests.

Point accuracy is MAE and RMSE over all day-hour cells.  Probabilistic
accuracy uses the 99-quantile grid: CRPS approximated by the mean
pinball loss across percentiles 1..99 (factor 2 omitted), central
prediction intervals on the even coverage grid 2..98, their empirical
coverage (PICP), mean absolute coverage error (MAACE) and mean width
(MPIW).  Model pairs are compared with the Diebold-Mariano statistic on
daily CRPS differences, using a Newey-West long-run variance with
Bartlett weights and lag floor(T^(1/3)).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from probcast.distribution import COVERAGE_LEVELS, PERCENTILES, PointForecast, QuantileForecast
from probcast.errors import ConfigError, DataError
from probcast.quantreg import pinball


def _point_values(pred) -> np.ndarray:
    values = pred.values if isinstance(pred, PointForecast) else np.asarray(pred, dtype=float)
    if values.ndim != 2 or values.shape[1] != 24:
        raise DataError("point forecasts must be (days, 24)")
    return values


def _quantile_values(qf) -> np.ndarray:
    values = qf.values if isinstance(qf, QuantileForecast) else np.asarray(qf, dtype=float)
    if values.ndim != 3 or values.shape[1:] != (24, PERCENTILES.size):
        raise DataError("quantile forecasts must be (days, 24, 99)")
    if np.any(np.diff(values, axis=2) < 0):
        raise DataError("quantile values must be non-decreasing across percentiles")
    return values


def _aligned_actual(actual, n_days: int) -> np.ndarray:
    actual = actual.values if isinstance(actual, PointForecast) else np.asarray(actual, dtype=float)
    if actual.shape != (n_days, 24):
        raise DataError(f"actuals must be ({n_days}, 24), got {actual.shape}")
    return actual


def mae_rmse(pred, actual) -> tuple:
    """Mean absolute and root mean squared error over all cells."""
    values = _point_values(pred)
    actual = _aligned_actual(actual, values.shape[0])
    err = values - actual
    return float(np.mean(np.abs(err))), float(np.sqrt(np.mean(err**2)))


@dataclass
class IntervalSet:
    """Central interval bounds at one nominal coverage level."""

    level: int
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if self.lower.shape != self.upper.shape:
            raise DataError("interval bound shapes differ")
        if np.any(self.upper < self.lower):
            raise DataError("upper bounds must not fall below lower bounds")


def intervals_from_quantiles(qf, level: int) -> IntervalSet:
    """Bounds at percentiles (100-level)/2 and (100+level)/2.

    The level must be even so both percentiles land on the integer grid.
    """
    values = _quantile_values(qf)
    if level not in COVERAGE_LEVELS:
        raise ConfigError(f"level must be an even integer in [2, 98], got {level}")
    lo_pct = (100 - level) // 2
    hi_pct = (100 + level) // 2
    return IntervalSet(level, values[:, :, lo_pct - 1], values[:, :, hi_pct - 1])


def picp(intervals: IntervalSet, actual) -> float:
    """Percentage of actuals inside the closed interval."""
    actual = np.asarray(actual, dtype=float)
    if actual.shape != intervals.lower.shape:
        raise DataError("actuals are misaligned with the interval set")
    inside = (actual >= intervals.lower) & (actual <= intervals.upper)
    return float(100.0 * np.mean(inside))


def mpiw(intervals: IntervalSet) -> float:
    """Mean interval width."""
    return float(np.mean(intervals.upper - intervals.lower))


def maace(picps) -> float:
    """Mean |PICP - PINC| over the full coverage grid.

    picps maps level -> empirical coverage and must contain every level
    in 2..98 step 2.
    """
    missing = [lv for lv in COVERAGE_LEVELS if lv not in picps]
    if missing:
        raise DataError(f"missing coverage levels: {missing}")
    return float(np.mean([abs(picps[lv] - lv) for lv in COVERAGE_LEVELS]))


def crps_cells(qf, actual) -> np.ndarray:
    """Per-cell CRPS: mean pinball loss over the 99 percentiles."""
    values = _quantile_values(qf)
    actual = _aligned_actual(actual, values.shape[0])
    taus = PERCENTILES / 100.0
    losses = pinball(actual[:, :, None] - values, taus)
    return losses.mean(axis=2)


def crps_pinball(qf, actual) -> float:
    """CRPS averaged over all day-hour cells."""
    return float(np.mean(crps_cells(qf, actual)))


def daily_crps(qf, actual) -> np.ndarray:
    """CRPS per day, averaged over the 24 hours; the DM loss series."""
    return crps_cells(qf, actual).mean(axis=1)


@dataclass
class MetricsReport:
    mae: float
    rmse: float
    crps: float
    maace: float
    picp_by_level: dict
    mpiw_by_level: dict

    def __post_init__(self):
        for lv, val in self.picp_by_level.items():
            if not 0.0 <= val <= 100.0:
                raise DataError(f"PICP at level {lv} outside [0, 100]: {val}")


def evaluate(qf, actual, point=None) -> MetricsReport:
    """Full report for one model.

    point defaults to the median quantile when the model has no separate
    point forecast.
    """
    values = _quantile_values(qf)
    actual = _aligned_actual(actual, values.shape[0])
    if point is None:
        point = values[:, :, 49]
    mae, rmse = mae_rmse(point, actual)
    picps, widths = {}, {}
    for level in COVERAGE_LEVELS:
        iv = intervals_from_quantiles(values, level)
        picps[level] = picp(iv, actual)
        widths[level] = mpiw(iv)
    return MetricsReport(mae, rmse, crps_pinball(values, actual), maace(picps), picps, widths)


@dataclass
class DmResult:
    statistic: float
    p_value: float
    mean_daily_diff: float
    lag: int
    degenerate: bool = False
    loss: str = "crps"


def newey_west_variance(series: np.ndarray, lag: int) -> float:
    """Long-run variance of the sample mean with Bartlett weights."""
    d = np.asarray(series, dtype=float)
    t = d.size
    c = d - d.mean()
    gamma0 = float(c @ c) / t
    acc = gamma0
    for k in range(1, min(lag, t - 1) + 1):
        gamma = float(c[k:] @ c[:-k]) / t
        acc += 2.0 * (1.0 - k / (lag + 1.0)) * gamma
    return acc / t


def dm_test(loss_a, loss_b) -> DmResult:
    """Diebold-Mariano test on two aligned daily loss series.

    The statistic is mean(d) / sqrt(NWVar(mean(d))) with d = a - b, and
    the p-value the two-sided standard normal tail.  Identical series
    give (0, 1); a constant nonzero difference is flagged degenerate
    with an infinite statistic and p-value 0.
    """
    a = np.asarray(loss_a, dtype=float).ravel()
    b = np.asarray(loss_b, dtype=float).ravel()
    if a.size != b.size or a.size < 2:
        raise DataError("loss series must share a length of at least 2")
    d = a - b
    lag = int(np.floor(a.size ** (1.0 / 3.0)))
    if np.array_equal(a, b):
        return DmResult(0.0, 1.0, 0.0, lag)
    dbar = float(d.mean())
    var = newey_west_variance(d, lag)
    if var <= 0.0:
        if dbar == 0.0:
            return DmResult(0.0, 1.0, 0.0, lag)
        stat = np.inf if dbar > 0 else -np.inf
        return DmResult(float(stat), 0.0, dbar, lag, degenerate=True)
    stat = dbar / np.sqrt(var)
    p = float(2.0 * ndtr(-abs(stat)))
    return DmResult(float(stat), p, dbar, lag)


def dm_matrix(daily_losses: dict):
    """Pairwise DM statistics and p-values over a model dictionary.

    Returns (names, statistic matrix, p-value matrix) with entry (i, j)
    testing model i against model j.
    """
    names = list(daily_losses)
    k = len(names)
    stats = np.zeros((k, k))
    pvals = np.ones((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            res = dm_test(daily_losses[names[i]], daily_losses[names[j]])
            stats[i, j] = res.statistic
            stats[j, i] = -res.statistic
            pvals[i, j] = pvals[j, i] = res.p_value
    return names, stats, pvals


REPORT_LEVELS = (50, 90, 98)


def write_report_csv(rows, path) -> None:
    """Evaluation table, one model per row.

    rows maps model name to a MetricsReport, a (mean, std) pair of
    reports for multi-run models, or a plain column->value dict for
    point-only models (absent columns stay blank).
    """
    header = ["model", "mae", "rmse", "crps", "maace"]
    header += [f"picp_{lv}" for lv in REPORT_LEVELS]
    header += [f"mpiw_{lv}" for lv in REPORT_LEVELS]
    header += ["mae_std", "rmse_std", "crps_std", "maace_std"]

    def scalar_fields(rep):
        vals = [rep.mae, rep.rmse, rep.crps, rep.maace]
        vals += [rep.picp_by_level[lv] for lv in REPORT_LEVELS]
        vals += [rep.mpiw_by_level[lv] for lv in REPORT_LEVELS]
        return vals

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for name, rep in rows.items():
            if isinstance(rep, dict):
                writer.writerow(
                    [name] + [f"{rep[c]:.6f}" if c in rep else "" for c in header[1:]]
                )
            elif isinstance(rep, tuple):
                mean_rep, std = rep
                writer.writerow(
                    [name]
                    + [f"{v:.6f}" for v in scalar_fields(mean_rep)]
                    + [f"{v:.6f}" for v in (std.mae, std.rmse, std.crps, std.maace)]
                )
            else:
                writer.writerow(
                    [name] + [f"{v:.6f}" for v in scalar_fields(rep)] + ["", "", "", ""]
                )


def write_dm_csv(names, matrix, path) -> None:
    """One DM matrix (statistics or p-values) as a labeled CSV."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model"] + list(names))
        for i, name in enumerate(names):
            writer.writerow([name] + [f"{v:.6f}" for v in matrix[i]])
