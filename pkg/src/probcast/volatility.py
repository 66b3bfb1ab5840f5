"""Hourly conditional-variance models for residuals of the point forecaster.

Each delivery hour gets its own GARCH(1,1) fit on that hour's forecast
residuals:

    sigma2[t] = omega + alpha * eps[t-1]**2 + beta * sigma2[t-1]

with sigma2[0] set to the sample variance of the residuals.  Parameters
maximize the Gaussian log-likelihood of the residual series; the search
runs quasi-Newton on unconstrained coordinates (log omega, logit of the
persistence alpha+beta, logit of the alpha share) so omega > 0,
alpha >= 0, beta >= 0 and alpha + beta < 1 hold by construction.  Fits
whose persistence lands on the cap are flagged.

Models are fitted once on a calibration span and then updated
recursively while new residuals realize (VarianceWalker); no rolling
refit is performed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.signal import lfilter
from scipy.special import expit

from probcast.errors import ConfigError, DataError, NumericalError

PERSISTENCE_CAP = 1.0 - 1e-6
BOUNDARY_FLAG_AT = 1.0 - 1e-6
MIN_OBSERVATIONS = 50
LOG2PI = float(np.log(2.0 * np.pi))


@dataclass
class GarchModel:
    omega: float
    alpha: float
    beta: float
    residual_mean: float
    sigma2_init: float
    hour: int | None = None
    boundary: bool = False
    neg_loglik: float = float("nan")

    def __post_init__(self):
        if not (self.omega > 0 and self.alpha >= 0 and self.beta >= 0):
            raise ConfigError("omega must be positive and alpha, beta non-negative")
        if self.alpha + self.beta >= 1.0:
            raise ConfigError("alpha + beta must be below one")

    @property
    def unconditional_variance(self) -> float:
        return self.omega / (1.0 - self.alpha - self.beta)

    def variance_series(self, residuals: np.ndarray) -> np.ndarray:
        return garch_filter(residuals, self.omega, self.alpha, self.beta, self.sigma2_init)

    def step(self, eps2: float, sigma2: float) -> float:
        """One recursion step: the next conditional variance."""
        return self.omega + self.alpha * eps2 + self.beta * sigma2


def garch_filter(residuals, omega, alpha, beta, sigma2_init) -> np.ndarray:
    """Conditional variances of the residual series.

    sigma2[0] equals sigma2_init; later entries follow the recursion.
    Linear in beta, so the whole series comes out of one IIR filter pass.
    """
    eps2 = np.asarray(residuals, dtype=float) ** 2
    n = eps2.size
    if n == 0:
        return np.empty(0)
    out = np.empty(n)
    out[0] = sigma2_init
    if n > 1:
        drive = omega + alpha * eps2[:-1]
        out[1:] = lfilter([1.0], [1.0, -beta], drive, zi=np.array([beta * sigma2_init]))[0]
    return out


def garch_negloglik(residuals, omega, alpha, beta, sigma2_init=None) -> float:
    """Gaussian negative log-likelihood of zero-mean residuals."""
    eps = np.asarray(residuals, dtype=float)
    eps2 = eps**2
    if sigma2_init is None:
        sigma2_init = float(np.mean(eps2))
    s2 = garch_filter(eps, omega, alpha, beta, sigma2_init)
    if np.any(s2 <= 0) or not np.all(np.isfinite(s2)):
        return float("inf")
    return float(0.5 * np.sum(LOG2PI + np.log(s2) + eps2 / s2))


def _unpack(params, sigma2_scale):
    a, b, c = params
    omega = sigma2_scale * np.exp(np.clip(a, -40.0, 40.0))
    persistence = expit(b) * PERSISTENCE_CAP
    alpha = persistence * expit(c)
    return float(omega), float(alpha), float(persistence - alpha)


def fit_garch(residuals, hour: int | None = None, *, n_restarts: int = 5, seed: int = 0) -> GarchModel:
    """Maximum-likelihood GARCH(1,1) fit for one hour's residuals.

    Runs one moment-based start plus seeded random restarts and keeps
    the best optimum.  Raises DataError on short or degenerate input and
    NumericalError if every restart fails.
    """
    eps = np.asarray(residuals, dtype=float).ravel()
    if eps.size < MIN_OBSERVATIONS:
        raise DataError(f"need at least {MIN_OBSERVATIONS} residuals, got {eps.size}")
    if not np.all(np.isfinite(eps)):
        raise DataError("residuals must be finite")
    eps2 = eps**2
    v = float(np.mean(eps2))
    if v <= 0.0:
        raise DataError("residuals have zero variance")
    if n_restarts < 1:
        raise ConfigError("n_restarts must be positive")

    def objective(params):
        omega, alpha, beta = _unpack(params, v)
        s2 = garch_filter(eps, omega, alpha, beta, v)
        if np.any(s2 <= 0) or not np.all(np.isfinite(s2)):
            return 1e300
        val = 0.5 * np.sum(LOG2PI + np.log(s2) + eps2 / s2)
        return val if np.isfinite(val) else 1e300

    rng = np.random.default_rng(seed)
    # moment start: persistence 0.9 with a small shock share, omega by
    # variance targeting omega = v * (1 - alpha - beta)
    starts = [np.array([np.log(0.1), 2.2, -2.1])]
    for _ in range(n_restarts - 1):
        starts.append(
            np.array(
                [
                    rng.normal(np.log(0.2), 1.0),
                    rng.normal(1.5, 1.5),
                    rng.normal(-1.0, 1.5),
                ]
            )
        )
    best = None
    for x0 in starts:
        res = minimize(objective, x0, method="BFGS", options={"maxiter": 500, "gtol": 1e-7})
        if best is None or res.fun < best.fun:
            best = res
    if best is None or not np.isfinite(best.fun) or best.fun >= 1e300:
        raise NumericalError("all volatility fits failed")
    omega, alpha, beta = _unpack(best.x, v)
    return GarchModel(
        omega=omega,
        alpha=alpha,
        beta=beta,
        residual_mean=float(np.mean(eps)),
        sigma2_init=v,
        hour=hour,
        boundary=alpha + beta >= BOUNDARY_FLAG_AT,
        neg_loglik=float(best.fun),
    )


def forecast_variance(model: GarchModel, recent_residuals, steps: int = 1) -> np.ndarray:
    """Variance forecasts for the steps after the residual history ends.

    The history is filtered from the model's stored starting variance;
    step one conditions on the last residual, later steps iterate the
    recursion with squared shocks replaced by their expectation.
    """
    if steps < 1:
        raise ConfigError("steps must be positive")
    eps = np.asarray(recent_residuals, dtype=float).ravel()
    if eps.size == 0:
        raise DataError("need at least one residual to forecast from")
    s2 = model.variance_series(eps)
    out = np.empty(steps)
    out[0] = model.step(float(eps[-1] ** 2), float(s2[-1]))
    for k in range(1, steps):
        out[k] = model.omega + (model.alpha + model.beta) * out[k - 1]
    return out


class VarianceWalker:
    """One-step-ahead variances continued past the calibration span.

    Seeded with the calibration residuals, predict() returns the
    variance for the next period and update() feeds the realized
    residual in, exactly as if the filter had run over the concatenated
    series.
    """

    def __init__(self, model: GarchModel, calibration_residuals):
        eps = np.asarray(calibration_residuals, dtype=float).ravel()
        if eps.size == 0:
            raise DataError("calibration residuals must be non-empty")
        self.model = model
        s2 = model.variance_series(eps)
        self._next = model.step(float(eps[-1] ** 2), float(s2[-1]))

    def predict(self) -> float:
        return self._next

    def update(self, residual: float) -> None:
        self._next = self.model.step(float(residual) ** 2, self._next)


def save_garch_models(models, path) -> None:
    """CSV dump, one row per hourly model."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["hour", "omega", "alpha", "beta"])
        for m in models:
            writer.writerow([m.hour, repr(float(m.omega)), repr(float(m.alpha)), repr(float(m.beta))])


def load_garch_models(path, sigma2_inits=None):
    """Models from a CSV dump.

    The file stores only the recursion parameters; pass sigma2_inits
    (hour -> starting variance) to restore filtering, else the
    unconditional variance is used.
    """
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["hour", "omega", "alpha", "beta"]:
            raise DataError(f"{path}: not a volatility model file")
        for rec in reader:
            hour = int(rec[0])
            omega, alpha, beta = float(rec[1]), float(rec[2]), float(rec[3])
            if sigma2_inits is not None and hour in sigma2_inits:
                s2 = float(sigma2_inits[hour])
            else:
                s2 = omega / (1.0 - alpha - beta)
            out.append(
                GarchModel(omega, alpha, beta, residual_mean=0.0, sigma2_init=s2, hour=hour)
            )
    return out


def simulate_garch(n, omega, alpha, beta, seed=0, burn_in=500) -> np.ndarray:
    """Zero-mean GARCH(1,1) draws, used by the recovery checks."""
    if not (omega > 0 and alpha >= 0 and beta >= 0 and alpha + beta < 1):
        raise ConfigError("parameters must satisfy omega > 0 and alpha + beta < 1")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(n + burn_in)
    s2 = omega / (1.0 - alpha - beta)
    out = np.empty(n + burn_in)
    for t in range(n + burn_in):
        eps = np.sqrt(s2) * z[t]
        out[t] = eps
        s2 = omega + alpha * eps * eps + beta * s2
    return out[burn_in:]
