"""Seeded synthetic market generator with a known ground-truth law.

Prices decompose into a deterministic calendar part (hour-of-day shape,
annual cycle, weekday offsets), linear responses to generated load and
renewable forecasts, a per-hour AR(1) anomaly whose innovations follow a
daily GARCH(1,1) law, an optional slow volatility ramp, and occasional
positive evening spikes.  Every piece is controlled by SyntheticSpec, so
degenerate corners (pure AR, homoscedastic, zero-noise) are one field
away, and detailed=True returns the exact conditional mean and standard
deviation next to the series for oracle tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date, datetime, timedelta

import numpy as np

from probcast.data import HourlyRecord, MarketSeries, NO_TIMEZONE
from probcast.errors import ConfigError

N_HOURS = 24


@dataclass
class SyntheticSpec:
    n_days: int = 900
    start: date = date(2021, 1, 1)
    base_level: float = 50.0
    daily_amplitude: float = 12.0
    annual_amplitude: float = 8.0
    weekday_effects: tuple = (2.0, 3.0, 3.0, 2.5, 1.5, -6.0, -9.0)
    ar_coefficient: float = 0.7
    noise_sigma: float = 5.0
    garch_alpha: float = 0.10
    garch_beta: float = 0.85
    vol_ramp: float = 1.0
    spike_probability: float = 0.0
    spike_scale: float = 40.0
    load_effect: float = 0.15
    renewable_effect: float = -0.12
    load_base: float = 100.0
    load_amplitude: float = 20.0
    load_weekend_drop: float = 12.0
    renewable_base: float = 60.0
    renewable_amplitude: float = 18.0
    exo_noise_sigma: float = 4.0

    def __post_init__(self):
        if isinstance(self.start, str):
            try:
                self.start = date.fromisoformat(self.start)
            except ValueError as exc:
                raise ConfigError(f"start must be an ISO date: {exc}") from exc
        if self.n_days < 1:
            raise ConfigError("n_days must be positive")
        if len(self.weekday_effects) != 7:
            raise ConfigError("weekday_effects needs 7 entries, Monday first")
        if self.noise_sigma < 0 or self.exo_noise_sigma < 0:
            raise ConfigError("noise scales must be non-negative")
        if not 0.0 <= self.spike_probability <= 1.0:
            raise ConfigError("spike_probability must be a probability")
        if self.garch_alpha < 0 or self.garch_beta < 0 or self.garch_alpha + self.garch_beta >= 1:
            raise ConfigError("volatility law needs alpha, beta >= 0 with alpha + beta < 1")
        if not -1.0 < self.ar_coefficient < 1.0:
            raise ConfigError("ar_coefficient must lie in (-1, 1) for stationarity")
        if self.vol_ramp <= 0:
            raise ConfigError("vol_ramp must be positive")


def _hour_shapes():
    angle = 2.0 * np.pi * np.arange(N_HOURS) / N_HOURS
    price = 0.65 * np.sin(angle - 2.1) + 0.35 * np.sin(2.0 * angle - 0.7)
    load = 0.8 * np.sin(angle - 2.0) + 0.2 * np.sin(2.0 * angle - 1.0)
    renewable = np.maximum(np.sin(angle - np.pi / 2.0), -0.2)
    return price, load, renewable


def make_synthetic(spec: SyntheticSpec | None = None, seed: int = 0, detailed: bool = False):
    """Generate a clock-normalized MarketSeries (plus truth if asked).

    The detailed payload holds the one-step conditional mean and sigma
    of every cell (spikes excluded, they are the unpredictable part),
    the deterministic component, the anomaly path and the innovations.
    """
    spec = spec if spec is not None else SyntheticSpec()
    rng = np.random.default_rng(seed)
    n = spec.n_days
    price_shape, load_shape, renew_shape = _hour_shapes()

    days = [spec.start + timedelta(days=d) for d in range(n)]
    dow = np.array([d.weekday() for d in days])
    doy = np.array([d.timetuple().tm_yday for d in days], dtype=float)
    annual = np.cos(2.0 * np.pi * (doy - 20.0) / 365.25)

    weekday = np.asarray(spec.weekday_effects, dtype=float)[dow]
    deterministic = (
        spec.base_level
        + spec.daily_amplitude * price_shape[None, :]
        + spec.annual_amplitude * annual[:, None]
        + weekday[:, None]
    )

    weekend = (dow >= 5).astype(float)
    load = (
        spec.load_base
        + spec.load_amplitude * load_shape[None, :]
        - spec.load_weekend_drop * weekend[:, None]
        + rng.normal(0.0, spec.exo_noise_sigma, size=(n, N_HOURS))
    )
    renewable = (
        spec.renewable_base
        + spec.renewable_amplitude * renew_shape[None, :]
        + 0.5 * spec.renewable_amplitude * (-annual[:, None])
        + rng.normal(0.0, 1.5 * spec.exo_noise_sigma, size=(n, N_HOURS))
    )
    renewable = np.maximum(renewable, 0.0)
    exo_part = spec.load_effect * (load - spec.load_base) + spec.renewable_effect * (
        renewable - spec.renewable_base
    )

    # per-hour daily GARCH innovations, optionally ramped over the span
    z = rng.standard_normal((n, N_HOURS))
    base_var = spec.noise_sigma**2
    omega = base_var * (1.0 - spec.garch_alpha - spec.garch_beta)
    s2 = np.full(N_HOURS, base_var)
    cond_var = np.empty((n, N_HOURS))
    shocks = np.empty((n, N_HOURS))
    for d in range(n):
        cond_var[d] = s2
        shocks[d] = np.sqrt(s2) * z[d]
        s2 = omega + spec.garch_alpha * shocks[d] ** 2 + spec.garch_beta * s2
    ramp = np.linspace(1.0, spec.vol_ramp, n)[:, None] if n > 1 else np.ones((1, N_HOURS))
    innovations = ramp * shocks

    anomaly = np.empty((n, N_HOURS))
    prev = np.zeros(N_HOURS)
    for d in range(n):
        prev = spec.ar_coefficient * prev + innovations[d]
        anomaly[d] = prev

    spikes = np.zeros((n, N_HOURS))
    spike_days = rng.random(n) < spec.spike_probability
    spike_hours = rng.integers(16, 21, size=n)
    spike_sizes = spec.spike_scale * (1.0 + rng.exponential(size=n))
    for d in np.flatnonzero(spike_days):
        h = int(spike_hours[d])
        spikes[d, h] += spike_sizes[d]
        if h + 1 < N_HOURS:
            spikes[d, h + 1] += 0.5 * spike_sizes[d]

    price = deterministic + exo_part + anomaly + spikes

    records = []
    for d, day in enumerate(days):
        start = datetime.combine(day, datetime.min.time())
        for h in range(N_HOURS):
            records.append(
                HourlyRecord(
                    start + timedelta(hours=h),
                    float(price[d, h]),
                    float(load[d, h]),
                    float(renewable[d, h]),
                )
            )
    series = MarketSeries(records, timezone_rule=NO_TIMEZONE, gaps=[])
    if not detailed:
        return series
    lagged_anomaly = np.vstack([np.zeros((1, N_HOURS)), anomaly[:-1]])
    truth = {
        "conditional_mean": deterministic + exo_part + spec.ar_coefficient * lagged_anomaly,
        "conditional_sigma": ramp * np.sqrt(cond_var),
        "deterministic": deterministic,
        "exogenous_part": exo_part,
        "anomaly": anomaly,
        "innovations": innovations,
        "spike_days": np.flatnonzero(spike_days),
        "days": days,
        "price": price,
        "load": load,
        "renewable": renewable,
    }
    return series, truth
