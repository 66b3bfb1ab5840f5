"""Gaussian mixture quantiles and the shared forecast containers.

The mixture inversion is checked three ways: against the closed Gaussian
form when the mixture collapses to one effective component, by pushing
every reported quantile back through the mixture CDF, and against an
independent scalar bisection written directly from the CDF definition.
"""

from datetime import date, timedelta

import numpy as np
import pytest
from scipy.special import ndtr, ndtri

from probcast.distribution import (
    COVERAGE_LEVELS,
    PERCENTILES,
    MixtureDistribution,
    PointForecast,
    QuantileForecast,
    equal_weight_mixture,
    gaussian_percentiles,
    mixture_cdf,
    mixture_quantile,
    mixture_quantile_grid,
    to_quantile_forecast,
)
from probcast.errors import DataError


def _bisect_quantile(weights, means, stds, p, iters=200):
    lo = min(m - 15 * s for m, s in zip(means, stds))
    hi = max(m + 15 * s for m, s in zip(means, stds))
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        f = sum(w * ndtr((mid - m) / s) for w, m, s in zip(weights, means, stds))
        if f < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class TestGrids:
    def test_percentile_grid_and_coverage_levels(self):
        np.testing.assert_array_equal(PERCENTILES, np.arange(1, 100))
        assert COVERAGE_LEVELS == tuple(range(2, 99, 2))
        assert len(COVERAGE_LEVELS) == 49


class TestGaussianPercentiles:
    def test_matches_ndtri_formula(self):
        out = gaussian_percentiles(10.0, 3.0)
        expected = 10.0 + 3.0 * ndtri(np.arange(1, 100) / 100.0)
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_median_and_symmetry(self):
        out = gaussian_percentiles(7.0, 2.5)
        assert abs(out[49] - 7.0) < 1e-12
        np.testing.assert_allclose(out + out[::-1], 14.0, atol=1e-9)

    def test_array_broadcast(self):
        mean = np.arange(48.0).reshape(2, 24)
        std = np.full_like(mean, 2.0)
        out = gaussian_percentiles(mean, std)
        assert out.shape == (2, 24, 99)
        np.testing.assert_allclose(out[1, 5], gaussian_percentiles(mean[1, 5], 2.0))


class TestMixtureDistribution:
    def test_validation(self):
        with pytest.raises(DataError):
            MixtureDistribution([0.5, 0.6], [0.0, 1.0], [1.0, 1.0])
        with pytest.raises(DataError):
            MixtureDistribution([0.5, 0.5], [0.0, 1.0], [1.0, 0.0])
        with pytest.raises(DataError):
            MixtureDistribution([1.0], [np.inf], [1.0])
        with pytest.raises(DataError):
            MixtureDistribution([0.7, 0.3], [0.0], [1.0, 1.0])

    def test_mean_is_weighted_component_mean(self):
        mix = MixtureDistribution([0.25, 0.75], [0.0, 8.0], [1.0, 2.0])
        assert mix.mean() == 6.0

    def test_cdf_matches_literal_sum(self, rng):
        mix = equal_weight_mixture([0.0, 3.0, -1.5], [1.0, 0.5, 2.0])
        xs = rng.uniform(-6, 8, size=20)
        expected = np.array(
            [
                sum(
                    w * ndtr((x - m) / s)
                    for w, m, s in zip(mix.weights, mix.means, mix.stds)
                )
                for x in xs
            ]
        )
        np.testing.assert_allclose(mixture_cdf(mix, xs), expected, atol=1e-14)
        assert isinstance(mixture_cdf(mix, 0.0), float)


class TestMixtureQuantile:
    def test_single_component_equals_gaussian(self):
        mix = MixtureDistribution([1.0], [4.0], [1.5])
        p = np.arange(1, 100) / 100.0
        out = mixture_quantile(mix, p)
        np.testing.assert_allclose(out, 4.0 + 1.5 * ndtri(p), atol=1e-6)

    def test_identical_components_equal_gaussian(self):
        mix = equal_weight_mixture([2.0] * 5, [3.0] * 5)
        p = np.array([0.05, 0.5, 0.95])
        np.testing.assert_allclose(mixture_quantile(mix, p), 2.0 + 3.0 * ndtri(p), atol=1e-6)

    def test_cdf_round_trip(self):
        mix = equal_weight_mixture([-5.0, 0.0, 6.0], [0.7, 2.0, 1.1])
        p = np.arange(1, 100) / 100.0
        out = mixture_quantile(mix, p)
        np.testing.assert_allclose(mixture_cdf(mix, out), p, atol=1e-8)
        assert np.all(np.diff(out) > 0)

    def test_matches_independent_bisection(self):
        w = [0.2, 0.5, 0.3]
        m = [-3.0, 1.0, 10.0]
        s = [0.5, 1.5, 3.0]
        mix = MixtureDistribution(w, m, s)
        for p in (0.01, 0.1, 0.5, 0.9, 0.99):
            np.testing.assert_allclose(
                mixture_quantile(mix, p), _bisect_quantile(w, m, s, p), atol=1e-6
            )

    def test_scalar_probability_returns_float(self):
        mix = equal_weight_mixture([0.0, 1.0], [1.0, 1.0])
        assert isinstance(mixture_quantile(mix, 0.5), float)

    def test_probability_bounds(self):
        mix = equal_weight_mixture([0.0], [1.0])
        with pytest.raises(DataError):
            mixture_quantile(mix, 0.0)
        with pytest.raises(DataError):
            mixture_quantile(mix, 1.0)


class TestMixtureQuantileGrid:
    def test_grid_matches_per_point_inversion(self, rng):
        means = rng.normal(size=(3, 24, 4)) * 5.0
        stds = rng.uniform(0.5, 2.0, size=(3, 24, 4))
        out = mixture_quantile_grid(means, stds)
        assert out.shape == (3, 24, 99)
        d, h = 1, 7
        mix = equal_weight_mixture(means[d, h], stds[d, h])
        np.testing.assert_allclose(
            out[d, h], mixture_quantile(mix, np.arange(1, 100) / 100.0), atol=1e-6
        )
        assert np.all(np.diff(out, axis=-1) >= -1e-9)

    def test_shape_mismatch(self):
        with pytest.raises(DataError):
            mixture_quantile_grid(np.zeros((2, 3)), np.ones((2, 4)))


class TestToQuantileForecast:
    def test_mixture_and_tuple_routes_agree_for_gaussian(self):
        mix = MixtureDistribution([1.0], [5.0], [2.0])
        via_mix = to_quantile_forecast(mix)
        via_tuple = to_quantile_forecast((np.array(5.0), np.array(2.0)))
        np.testing.assert_allclose(via_mix, via_tuple, atol=1e-6)

    def test_explicit_grid_is_sorted(self, rng):
        raw = rng.normal(size=(2, 24, 99))
        out = to_quantile_forecast(raw)
        assert np.all(np.diff(out, axis=-1) >= 0)
        np.testing.assert_allclose(np.sort(raw, axis=-1), out)

    def test_rejects_unknown_source(self):
        with pytest.raises(DataError):
            to_quantile_forecast(np.zeros((2, 5)))


class TestForecastContainers:
    def _dates(self, n):
        return [date(2022, 1, 1) + timedelta(days=i) for i in range(n)]

    def test_quantile_forecast_validation(self, rng):
        dates = self._dates(2)
        good = np.sort(rng.normal(size=(2, 24, 99)), axis=2)
        qf = QuantileForecast(dates, good)
        np.testing.assert_array_equal(qf.day(dates[1]), good[1])
        with pytest.raises(DataError):
            QuantileForecast(dates, good[:, :, :50])
        with pytest.raises(DataError):
            QuantileForecast(dates[:1], good)
        bad = good.copy()
        bad[0, 0, 10] = bad[0, 0, 9] - 1.0
        with pytest.raises(DataError, match="non-decreasing"):
            QuantileForecast(dates, bad)
        with pytest.raises(DataError, match="no forecast"):
            qf.day(date(1999, 1, 1))

    def test_quantile_forecast_csv_round_trip(self, rng, tmp_path):
        dates = self._dates(3)
        values = np.sort(rng.normal(size=(3, 24, 99)) * 10.0, axis=2)
        qf = QuantileForecast(dates, values)
        path = tmp_path / "qf.csv"
        qf.to_csv(path)
        back = QuantileForecast.from_csv(path)
        assert back.dates == dates
        np.testing.assert_array_equal(back.values, values)

    def test_point_forecast_csv_round_trip(self, rng, tmp_path):
        dates = self._dates(4)
        values = rng.normal(size=(4, 24)) * 30.0
        pf = PointForecast(dates, values)
        path = tmp_path / "pf.csv"
        pf.to_csv(path)
        back = PointForecast.from_csv(path)
        assert back.dates == dates
        np.testing.assert_array_equal(back.values, values)

    def test_csv_header_rejection(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("nope,really\n1,2\n")
        with pytest.raises(DataError):
            QuantileForecast.from_csv(path)
        with pytest.raises(DataError):
            PointForecast.from_csv(path)

    def test_incomplete_day_rejected(self, rng, tmp_path):
        dates = self._dates(1)
        values = np.sort(rng.normal(size=(1, 24, 99)), axis=2)
        path = tmp_path / "partial.csv"
        QuantileForecast(dates, values).to_csv(path)
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:-1]) + "\n")
        with pytest.raises(DataError, match="incomplete"):
            QuantileForecast.from_csv(path)
