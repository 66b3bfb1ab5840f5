"""Predictive distributions and the shared percentile forecast format.

Every probabilistic model in the toolkit ultimately reports its forecast
as 99 percentile values (1 through 99) per delivery hour.  This module
holds the Gaussian mixture machinery used by the ensemble and dropout
predictors (CDF evaluation and numerical quantile inversion), the
conversion of Gaussian, mixture, or explicit sources into the common
percentile grid, and the QuantileForecast / PointForecast containers with
their CSV formats.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import date, datetime

import numpy as np
from scipy.special import ndtr, ndtri

from probcast.errors import DataError

PERCENTILES = np.arange(1, 100)
COVERAGE_LEVELS = tuple(range(2, 99, 2))

CDF_TOL = 1e-8
_MAX_BISECT = 300


@dataclass(frozen=True)
class MixtureDistribution:
    """Finite Gaussian mixture over one scalar quantity.

    weights must be non-negative and sum to one; stds must be positive.
    """

    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        m = np.atleast_1d(np.asarray(self.means, dtype=float))
        s = np.atleast_1d(np.asarray(self.stds, dtype=float))
        if not (w.shape == m.shape == s.shape) or w.ndim != 1 or w.size == 0:
            raise DataError("mixture components must be equal-length 1-d arrays")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(m)) and np.all(np.isfinite(s))):
            raise DataError("mixture parameters must be finite")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise DataError("mixture weights must be non-negative and sum to 1")
        if np.any(s <= 0):
            raise DataError("mixture component stds must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "stds", s)

    @property
    def n_components(self) -> int:
        return self.weights.size

    def mean(self) -> float:
        return float(self.weights @ self.means)


def equal_weight_mixture(means, stds) -> MixtureDistribution:
    """Mixture with weights 1/N over the given component parameters."""
    means = np.atleast_1d(np.asarray(means, dtype=float))
    return MixtureDistribution(np.full(means.size, 1.0 / means.size), means, stds)


def mixture_cdf(mix: MixtureDistribution, x):
    """F(x) = sum_i w_i * Phi((x - mu_i) / sigma_i), vectorized over x."""
    xa = np.asarray(x, dtype=float)
    z = (xa[..., None] - mix.means) / mix.stds
    out = ndtr(z) @ mix.weights
    return float(out) if np.isscalar(x) or xa.ndim == 0 else out


def _invert_mixture_cdf(weights, means, stds, probs, tol=CDF_TOL):
    """Solve F(x) = p per row by guarded bisection.

    weights, means, stds have shape (M, N); probs has shape (M,).  The
    first probe is x0 = sum_i w_i * F_i^-1(p), the weighted sum of the
    component quantiles; the bracket starts at the farthest component
    tails and is widened geometrically in the (pathological) case where
    it does not straddle the root.  Iteration stops once every row has
    |F(x) - p| <= tol.
    """
    w = np.asarray(weights, dtype=float)
    mu = np.asarray(means, dtype=float)
    sd = np.asarray(stds, dtype=float)
    p = np.asarray(probs, dtype=float)
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        raise DataError("quantile probabilities must lie strictly in (0, 1)")

    lo = (mu - 12.0 * sd).min(axis=1)
    hi = (mu + 12.0 * sd).max(axis=1)

    def cdf_at(x, idx):
        z = (x[:, None] - mu[idx]) / sd[idx]
        return np.einsum("ij,ij->i", ndtr(z), w[idx])

    every = np.arange(p.size)
    # widen until the bracket straddles p (a few steps at most)
    for _ in range(60):
        bad_lo = cdf_at(lo, every) > p
        bad_hi = cdf_at(hi, every) < p
        if not (bad_lo.any() or bad_hi.any()):
            break
        width = hi - lo
        lo = np.where(bad_lo, lo - width, lo)
        hi = np.where(bad_hi, hi + width, hi)

    x = np.clip((w * mu).sum(axis=1) + (w * sd).sum(axis=1) * ndtri(p), lo, hi)
    result = x.copy()
    active = every
    for _ in range(_MAX_BISECT):
        f = cdf_at(x, active)
        resid = f - p[active]
        done = np.abs(resid) <= tol
        result[active[done]] = x[done]
        keep = ~done
        if not keep.any():
            break
        active = active[keep]
        low_side = resid[keep] < 0
        lo_a = lo[active]
        hi_a = hi[active]
        xk = x[keep]
        lo[active] = np.where(low_side, xk, lo_a)
        hi[active] = np.where(low_side, hi_a, xk)
        x = 0.5 * (lo[active] + hi[active])
    else:
        result[active] = x
    return result


def mixture_quantile(mix: MixtureDistribution, p):
    """Inverse CDF of the mixture, vectorized over p, |F(Q(p)) - p| <= 1e-8."""
    pa = np.atleast_1d(np.asarray(p, dtype=float))
    n = pa.size
    out = _invert_mixture_cdf(
        np.broadcast_to(mix.weights, (n, mix.n_components)),
        np.broadcast_to(mix.means, (n, mix.n_components)),
        np.broadcast_to(mix.stds, (n, mix.n_components)),
        pa,
    )
    if np.isscalar(p) or np.asarray(p).ndim == 0:
        return float(out[0])
    return out.reshape(np.asarray(p).shape)


def mixture_quantile_grid(means, stds, percentiles=PERCENTILES, weights=None, chunk=200_000):
    """Percentile grid for many equal-weight mixtures at once.

    means and stds have shape (..., N); the result appends an axis for the
    requested percentiles.  Work is chunked so the intermediate (points x
    components) CDF table stays small.
    """
    mu = np.asarray(means, dtype=float)
    sd = np.asarray(stds, dtype=float)
    if mu.shape != sd.shape:
        raise DataError("means and stds must share a shape")
    ncomp = mu.shape[-1]
    lead = mu.shape[:-1]
    q = np.asarray(percentiles, dtype=float) / 100.0
    nq = q.size
    mu2 = mu.reshape(-1, ncomp)
    sd2 = sd.reshape(-1, ncomp)
    rows = mu2.shape[0]
    if weights is None:
        w2 = np.full((rows, ncomp), 1.0 / ncomp)
    else:
        w2 = np.broadcast_to(np.asarray(weights, dtype=float), (rows, ncomp))

    mu_r = np.repeat(mu2, nq, axis=0)
    sd_r = np.repeat(sd2, nq, axis=0)
    w_r = np.repeat(w2, nq, axis=0)
    p_r = np.tile(q, rows)
    out = np.empty(rows * nq)
    step = max(chunk // max(ncomp, 1), nq)
    for start in range(0, rows * nq, step):
        stop = min(start + step, rows * nq)
        out[start:stop] = _invert_mixture_cdf(
            w_r[start:stop], mu_r[start:stop], sd_r[start:stop], p_r[start:stop]
        )
    return out.reshape(*lead, nq)


def gaussian_percentiles(mean, std, percentiles=PERCENTILES):
    """mu + sigma * Phi^-1(q/100) with an axis appended for the grid."""
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    z = ndtri(np.asarray(percentiles, dtype=float) / 100.0)
    return mean[..., None] + std[..., None] * z


def to_quantile_forecast(source, percentiles=PERCENTILES):
    """Convert a predictive distribution into the common percentile grid.

    Accepted sources: a MixtureDistribution, a (mean, std) pair of scalars
    or arrays, or an explicit array whose trailing axis already matches
    the grid (sorted in place if needed).  A single Gaussian passed as a
    one-component mixture matches the (mean, std) route.
    """
    nq = len(np.asarray(percentiles))
    if isinstance(source, MixtureDistribution):
        return mixture_quantile(source, np.asarray(percentiles, dtype=float) / 100.0)
    if isinstance(source, tuple) and len(source) == 2:
        return gaussian_percentiles(source[0], source[1], percentiles)
    arr = np.asarray(source, dtype=float)
    if arr.ndim >= 1 and arr.shape[-1] == nq:
        return np.sort(arr, axis=-1)
    raise DataError("unsupported forecast distribution source")


def _parse_date(text: str) -> date:
    return datetime.strptime(text, "%Y-%m-%d").date()


@dataclass
class QuantileForecast:
    """Percentile forecasts for a run of days, shaped (days, 24, 99)."""

    dates: list
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 3 or self.values.shape[1:] != (24, len(PERCENTILES)):
            raise DataError("quantile values must have shape (days, 24, 99)")
        if len(self.dates) != self.values.shape[0]:
            raise DataError("date axis does not match value rows")
        if self.values.size and np.any(np.diff(self.values, axis=2) < 0):
            raise DataError("percentile values must be non-decreasing within each hour")

    def day(self, d: date) -> np.ndarray:
        try:
            return self.values[self.dates.index(d)]
        except ValueError:
            raise DataError(f"no forecast for {d}") from None

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["date", "hour"] + [f"q{q:02d}" for q in PERCENTILES])
            for d, day_vals in zip(self.dates, self.values):
                for h in range(24):
                    writer.writerow([d.isoformat(), h] + [repr(float(v)) for v in day_vals[h]])

    @classmethod
    def from_csv(cls, path) -> "QuantileForecast":
        dates: list = []
        rows: list = []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or header[:2] != ["date", "hour"] or len(header) != 101:
                raise DataError(f"{path}: not a quantile forecast file")
            for rec in reader:
                d = _parse_date(rec[0])
                if not dates or dates[-1] != d:
                    dates.append(d)
                    rows.append(np.full((24, 99), np.nan))
                rows[-1][int(rec[1])] = [float(v) for v in rec[2:]]
        values = np.array(rows).reshape(-1, 24, 99) if rows else np.empty((0, 24, 99))
        if np.any(~np.isfinite(values)):
            raise DataError(f"{path}: incomplete day in quantile forecast file")
        return cls(dates, values)


@dataclass
class PointForecast:
    """Point forecasts for a run of days, shaped (days, 24)."""

    dates: list
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != 24:
            raise DataError("point values must have shape (days, 24)")
        if len(self.dates) != self.values.shape[0]:
            raise DataError("date axis does not match value rows")

    def day(self, d: date) -> np.ndarray:
        try:
            return self.values[self.dates.index(d)]
        except ValueError:
            raise DataError(f"no forecast for {d}") from None

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["date"] + [f"h{h:02d}" for h in range(24)])
            for d, vals in zip(self.dates, self.values):
                writer.writerow([d.isoformat()] + [repr(float(v)) for v in vals])

    @classmethod
    def from_csv(cls, path) -> "PointForecast":
        dates: list = []
        rows: list = []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or header[0] != "date" or len(header) != 25:
                raise DataError(f"{path}: not a point forecast file")
            for rec in reader:
                dates.append(_parse_date(rec[0]))
                rows.append([float(v) for v in rec[1:]])
        values = np.array(rows) if rows else np.empty((0, 24))
        return cls(dates, values)
