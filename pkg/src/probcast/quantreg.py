"""Quantile regression averaging of rolling-window point forecasts.

For every delivery hour and every percentile 1..99, a small pinball
regression maps the window-ensemble member forecasts (plus an intercept)
to a conditional quantile of the price.  The fitted curves form a full
predictive distribution per hour; crossing quantiles are repaired by
sorting.

The solver minimizes the exact pinball objective

    sum_i rho_tau(y_i - x_i'beta),   rho_tau(u) = u * (tau - 1{u < 0})

by iteratively reweighted least squares on a smoothed surrogate
0.5*sqrt(u^2 + eps^2) + (tau - 0.5)*u with eps annealed towards zero,
then polishes the result by enumerating exact interpolations through the
lowest-residual points.  A pinball optimum always sits at such a basic
solution, so the polish step recovers the vertex the smooth iteration
approaches.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from probcast.distribution import PERCENTILES, QuantileForecast
from probcast.errors import ConfigError, DataError

IRLS_STAGES = 7
IRLS_EPS_START = 1e-2
IRLS_MAX_ITER = 40


def pinball(residuals: np.ndarray, tau: float) -> np.ndarray:
    """Elementwise pinball loss of forecast residuals y - q."""
    u = np.asarray(residuals, dtype=float)
    return u * (tau - (u < 0.0))


def pinball_loss(residuals: np.ndarray, tau: float) -> float:
    """Mean pinball loss; the quantity the solver minimizes up to scale."""
    if not 0.0 < tau < 1.0:
        raise ConfigError(f"tau must be in (0, 1), got {tau}")
    return float(np.mean(pinball(residuals, tau)))


def _snap_polish(design, y, tau, beta, extra=2):
    """Replace beta by the best exact interpolation near its active set.

    Enumerates every k-subset of the k+extra smallest-|residual| rows,
    solves the interpolation conditions and keeps whichever candidate
    (including beta itself) has the lowest exact pinball objective.
    """
    n, k = design.shape
    best = beta
    best_obj = pinball(y - design @ beta, tau).sum()
    order = np.argsort(np.abs(y - design @ beta), kind="stable")[: min(n, k + extra)]
    for rows in combinations(order.tolist(), k):
        sub = design[list(rows)]
        try:
            cand = np.linalg.solve(sub, y[list(rows)])
        except np.linalg.LinAlgError:
            continue
        obj = pinball(y - design @ cand, tau).sum()
        if np.isfinite(obj) and obj < best_obj:
            best, best_obj = cand, obj
    return best


def fit_quantile_regression(
    x: np.ndarray,
    y: np.ndarray,
    tau: float,
    *,
    fit_intercept: bool = True,
    tol: float = 1e-10,
    polish: bool = True,
) -> np.ndarray:
    """Coefficients of the tau-th conditional quantile of y given x.

    Returns the parameter vector with the intercept first when
    fit_intercept is set.
    """
    if not 0.0 < tau < 1.0:
        raise ConfigError(f"tau must be in (0, 1), got {tau}")
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(y, dtype=float).ravel()
    if x.shape[0] != y.size:
        raise DataError("x and y row counts differ")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise DataError("inputs to fit_quantile_regression must be finite")
    design = np.column_stack([np.ones(y.size), x]) if fit_intercept else x
    n, k = design.shape
    if n < k:
        raise DataError(f"need at least {k} rows, got {n}")
    beta = np.linalg.lstsq(design, y, rcond=None)[0]
    eps = IRLS_EPS_START
    for _ in range(IRLS_STAGES):
        for _ in range(IRLS_MAX_ITER):
            u = y - design @ beta
            w = 0.5 / np.sqrt(u * u + eps * eps)
            z = y + (tau - 0.5) / w
            sw = np.sqrt(w)
            new = np.linalg.lstsq(design * sw[:, None], z * sw, rcond=None)[0]
            step = float(np.max(np.abs(new - beta)))
            beta = new
            if step < tol * (1.0 + float(np.max(np.abs(beta)))):
                break
        eps *= 0.1
    if polish:
        beta = _snap_polish(design, y, tau, beta)
    return beta


@dataclass
class QraModel:
    hour: int
    percentile: int
    intercept: float
    weights: np.ndarray

    def predict(self, members: np.ndarray) -> np.ndarray:
        return np.asarray(members, dtype=float) @ self.weights + self.intercept


class QraForecaster:
    """All 24 x 99 fitted combiners, applied day by day."""

    def __init__(self, models):
        self.models = dict(models)
        if len(self.models) != 24 * PERCENTILES.size:
            raise ConfigError("expected one model per (hour, percentile)")

    @classmethod
    def fit(cls, members: np.ndarray, targets: np.ndarray, **kwargs) -> "QraForecaster":
        """Fit on stacked member forecasts.

        members has shape (days, n_members, 24) and targets (days, 24),
        both on the calibration span.
        """
        members = np.asarray(members, dtype=float)
        targets = np.asarray(targets, dtype=float)
        if members.ndim != 3 or members.shape[2] != 24 or targets.shape != members[:, 0, :].shape:
            raise DataError("members must be (days, n_members, 24) aligned with targets (days, 24)")
        models = {}
        for hour in range(24):
            x = members[:, :, hour]
            y = targets[:, hour]
            for q in PERCENTILES:
                beta = fit_quantile_regression(x, y, q / 100.0, **kwargs)
                models[(hour, int(q))] = QraModel(hour, int(q), float(beta[0]), beta[1:].copy())
        return cls(models)

    def predict(self, dates, members: np.ndarray) -> QuantileForecast:
        """Quantile curves for each day; crossings repaired by sorting."""
        members = np.asarray(members, dtype=float)
        if members.ndim != 3 or members.shape[2] != 24:
            raise DataError("members must be (days, n_members, 24)")
        values = np.empty((members.shape[0], 24, PERCENTILES.size))
        for hour in range(24):
            x = members[:, :, hour]
            for qi, q in enumerate(PERCENTILES):
                values[:, hour, qi] = self.models[(hour, int(q))].predict(x)
        values.sort(axis=2)
        return QuantileForecast(list(dates), values)


def save_qra_models(forecaster: QraForecaster, path) -> None:
    models = forecaster.models
    n_members = next(iter(models.values())).weights.size
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["hour", "percentile", "intercept"] + [f"w{i + 1}" for i in range(n_members)])
        for hour in range(24):
            for q in PERCENTILES:
                m = models[(hour, int(q))]
                writer.writerow([hour, int(q), repr(float(m.intercept))] + [repr(float(v)) for v in m.weights])


def load_qra_models(path) -> QraForecaster:
    models = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:3] != ["hour", "percentile", "intercept"]:
            raise DataError(f"{path}: not a combiner model file")
        for rec in reader:
            hour, q = int(rec[0]), int(rec[1])
            models[(hour, q)] = QraModel(
                hour, q, float(rec[2]), np.array([float(v) for v in rec[3:]])
            )
    return QraForecaster(models)
