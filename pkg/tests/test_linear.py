"""L1-penalized hourly models: solver optimality, ensembles, tuning.

The solver oracle re-derives the stationarity conditions of the
penalized least-squares objective from scratch: at an optimum of
(1/2n)||y - Xw||^2 + penalty * ||w||_1 on centred unit-variance columns,
every nonzero coordinate must satisfy grad_j = -penalty * sign(w_j) and
every zero coordinate |grad_j| <= penalty.
"""

from datetime import date, timedelta

import numpy as np
import pytest

from probcast.data import FeatureDataset, N_FEATURES, SPLIT_TEST, SPLIT_TRAIN, SPLIT_VALIDATION
from probcast.errors import ConfigError, DataError, NumericalError
from probcast.linear import (
    LassoModel,
    LearForecaster,
    fit_lasso,
    fit_lear_hour,
    lear_point_forecast,
    load_lear_models,
    save_lear_models,
    soft_threshold,
    tune_lambda,
)


def _standardized_problem(x, y):
    """The centred unit-variance normal-equation pieces, rebuilt by hand."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n = x.shape[0]
    xbar = x.mean(axis=0)
    scale = x.std(axis=0)
    safe = np.where(scale > 0.0, scale, 1.0)
    xs = (x - xbar) / safe
    xs[:, scale == 0.0] = 0.0
    yc = y - y.mean()
    return xs.T @ xs / n, xs.T @ yc / n, safe, scale


def _kkt_gap(x, y, model):
    """Worst violation of the subgradient optimality conditions."""
    gram, cov, safe, scale = _standardized_problem(x, y)
    w = model.coefficients * safe
    grad = gram @ w - cov
    lam = model.penalty
    gap = 0.0
    for j in range(w.size):
        if scale[j] == 0.0:
            continue
        if w[j] > 0.0:
            gap = max(gap, abs(grad[j] + lam))
        elif w[j] < 0.0:
            gap = max(gap, abs(grad[j] - lam))
        else:
            gap = max(gap, max(abs(grad[j]) - lam, 0.0))
    return gap


def _random_problem(rng, n, p, rho=0.0, noise=1.0):
    base = rng.normal(size=(n, p))
    if rho > 0.0:
        common = rng.normal(size=(n, 1))
        base = np.sqrt(1.0 - rho) * base + np.sqrt(rho) * common
    beta = np.zeros(p)
    k = max(2, p // 8)
    beta[rng.choice(p, size=k, replace=False)] = rng.normal(scale=2.0, size=k)
    y = base @ beta + 3.0 + noise * rng.normal(size=n)
    return base, y


class TestSoftThreshold:
    def test_hand_values(self):
        assert soft_threshold(3.0, 1.0) == 2.0
        assert soft_threshold(-3.0, 1.0) == -2.0
        assert soft_threshold(0.5, 1.0) == 0.0
        assert soft_threshold(-0.5, 1.0) == 0.0
        assert soft_threshold(2.0, 0.0) == 2.0
        assert soft_threshold(0.0, 0.0) == 0.0

    def test_shrinks_toward_zero_monotonically(self):
        thresholds = [0.0, 0.5, 1.0, 2.0]
        values = [abs(soft_threshold(1.7, t)) for t in thresholds]
        assert values == sorted(values, reverse=True)


class TestFitLassoOptimality:
    def test_stationarity_across_penalties_and_designs(self, rng):
        settings = [(80, 12, 0.0), (120, 40, 0.6), (30, 60, 0.3), (50, 50, 0.9)]
        for n, p, rho in settings:
            x, y = _random_problem(rng, n, p, rho=rho)
            for lam in (1e-4, 1e-2, 1e-1):
                model = fit_lasso(x, y, lam)
                gap = _kkt_gap(x, y, model)
                assert gap <= 1e-4 * max(1.0, lam), (n, p, rho, lam, gap)

    def test_duplicated_columns_still_reach_optimality(self, rng):
        x, y = _random_problem(rng, 60, 20, rho=0.2)
        x[:, 7] = x[:, 3]
        x[:, 15] = x[:, 3]
        model = fit_lasso(x, y, 5e-3)
        assert _kkt_gap(x, y, model) <= 1e-4

    def test_zero_penalty_matches_least_squares(self, rng):
        x, y = _random_problem(rng, 90, 10, noise=0.5)
        model = fit_lasso(x, y, 0.0)
        design = np.column_stack([np.ones(len(y)), x])
        dense, *_ = np.linalg.lstsq(design, y, rcond=None)
        np.testing.assert_allclose(model.intercept, dense[0], atol=1e-6)
        np.testing.assert_allclose(model.coefficients, dense[1:], atol=1e-6)

    def test_penalty_above_max_correlation_kills_all_coefficients(self, rng):
        x, y = _random_problem(rng, 70, 9)
        _, cov, _, _ = _standardized_problem(x, y)
        model = fit_lasso(x, y, np.max(np.abs(cov)) * 1.0001)
        np.testing.assert_array_equal(model.coefficients, 0.0)
        np.testing.assert_allclose(model.intercept, y.mean())

    def test_intercept_reconstruction_identity(self, rng):
        x, y = _random_problem(rng, 60, 8)
        model = fit_lasso(x, y, 1e-2)
        np.testing.assert_allclose(
            model.intercept, y.mean() - model.coefficients @ x.mean(axis=0), atol=1e-10
        )

    def test_recovers_planted_sparse_signal(self, rng):
        x = rng.normal(size=(200, 25))
        y = 3.0 * x[:, 2] - 2.0 * x[:, 5] + 1.0 + 0.01 * rng.normal(size=200)
        model = fit_lasso(x, y, 1e-3)
        np.testing.assert_allclose(model.coefficients[2], 3.0, atol=0.02)
        np.testing.assert_allclose(model.coefficients[5], -2.0, atol=0.02)
        others = np.delete(model.coefficients, [2, 5])
        assert np.max(np.abs(others)) < 0.02


class TestObjectivePath:
    def _objective(self, x, y, lam, coef, intercept):
        resid = y - x @ coef - intercept
        gram, cov, safe, _ = _standardized_problem(x, y)
        return float(resid @ resid) / (2 * len(y)) + lam * np.abs(coef * safe).sum()

    def test_path_is_monotone_non_increasing(self, rng):
        for n, p, rho in ((60, 15, 0.0), (40, 80, 0.5), (100, 30, 0.9)):
            x, y = _random_problem(rng, n, p, rho=rho)
            model = fit_lasso(x, y, 2e-3)
            path = model.objective_path
            assert path is not None and path.size == model.n_sweeps
            drops = np.diff(path)
            assert np.all(drops <= 1e-9 * np.maximum(1.0, np.abs(path[:-1])))

    def test_final_path_value_matches_returned_model(self, rng):
        x, y = _random_problem(rng, 60, 15)
        lam = 3e-3
        model = fit_lasso(x, y, lam)
        np.testing.assert_allclose(
            model.objective_path[-1],
            self._objective(x, y, lam, model.coefficients, model.intercept),
            rtol=1e-9,
            atol=1e-12,
        )

    def test_solution_l1_norm_shrinks_as_penalty_grows(self, rng):
        x, y = _random_problem(rng, 80, 20, rho=0.4)
        _, _, safe, _ = _standardized_problem(x, y)
        norms = []
        for lam in (1e-4, 1e-3, 1e-2, 5e-2, 1e-1):
            model = fit_lasso(x, y, lam)
            norms.append(np.abs(model.coefficients * safe).sum())
        assert all(b <= a + 1e-9 for a, b in zip(norms, norms[1:]))


class TestFitLassoValidation:
    def test_shape_mismatch_rejected(self, rng):
        with pytest.raises(DataError, match="one y value per row"):
            fit_lasso(rng.normal(size=(10, 3)), rng.normal(size=9), 0.1)

    def test_non_finite_rejected(self, rng):
        x = rng.normal(size=(10, 3))
        y = rng.normal(size=10)
        x[3, 1] = np.nan
        with pytest.raises(DataError, match="finite"):
            fit_lasso(x, y, 0.1)

    def test_negative_penalty_rejected(self, rng):
        with pytest.raises(ConfigError, match="non-negative"):
            fit_lasso(rng.normal(size=(10, 3)), rng.normal(size=10), -0.1)

    def test_constant_column_keeps_zero_coefficient(self, rng):
        x = rng.normal(size=(50, 6))
        x[:, 4] = 2.5
        y = x[:, 0] + rng.normal(size=50)
        model = fit_lasso(x, y, 1e-3)
        assert model.coefficients[4] == 0.0

    def test_sweep_cap_raises_numerical_error(self, rng):
        x, y = _random_problem(rng, 50, 30, rho=0.9)
        with pytest.raises(NumericalError, match="did not converge"):
            fit_lasso(x, y, 1e-5, max_sweeps=1)

    def test_hour_tag_passes_through(self, rng):
        x, y = _random_problem(rng, 30, 4)
        assert fit_lasso(x, y, 0.01, hour=17).hour == 17


@pytest.fixture(scope="module")
def split_dataset(dataset_220):
    from probcast.data import split_by_dates

    d = dataset_220.dates
    return split_by_dates(dataset_220, (d[0], d[109]), (d[110], d[139]), (d[140], d[159]))


class TestLearForecaster:
    def test_members_match_from_scratch_hourly_fits(self, split_dataset):
        windows = (56, 84)
        engine = LearForecaster(split_dataset, 2e-3, windows)
        i = split_dataset.index_of(split_dataset.dates[115])
        for _ in range(3):
            fc = engine.forecast_index(i)
            i += 1
        day = split_dataset.dates[i - 1]
        xrow = split_dataset.features[i - 1]
        for k, window in enumerate(windows):
            for hour in (0, 13, 23):
                cold = fit_lear_hour(split_dataset, hour, window, day, 2e-3)
                np.testing.assert_allclose(fc.members[k, hour], cold.predict(xrow), atol=5e-3)

    def test_mean_is_member_average(self, split_dataset):
        fc = lear_point_forecast(split_dataset, split_dataset.dates[120], 1e-2, (56, 84))
        np.testing.assert_allclose(fc.mean, fc.members.mean(axis=0), atol=1e-12)

    def test_forecast_indices_stacks_rows(self, split_dataset):
        engine = LearForecaster(split_dataset, 1e-2, (56,))
        idx = [115, 116, 117]
        members, mean = engine.forecast_indices(idx)
        assert members.shape == (3, 1, 24)
        np.testing.assert_allclose(mean, members.mean(axis=1))
        single = lear_point_forecast(split_dataset, split_dataset.dates[116], 1e-2, (56,))
        np.testing.assert_allclose(members[1], single.members, atol=5e-3)

    def test_insufficient_history_raises(self, split_dataset):
        engine = LearForecaster(split_dataset, 1e-2, (500,))
        with pytest.raises(DataError, match="insufficient history"):
            engine.forecast_index(120)

    def test_invalid_configuration_rejected(self, split_dataset):
        with pytest.raises(ConfigError):
            LearForecaster(split_dataset, 1e-2, ())
        with pytest.raises(ConfigError):
            LearForecaster(split_dataset, 1e-2, (0, 56))
        with pytest.raises(ConfigError):
            LearForecaster(split_dataset, -1.0, (56,))

    def test_fit_lear_hour_slices_trailing_window(self, split_dataset):
        day = split_dataset.dates[100]
        model = fit_lear_hour(split_dataset, 5, 56, day, 1e-2)
        i = split_dataset.index_of(day)
        direct = fit_lasso(
            split_dataset.features[i - 56 : i], split_dataset.targets[i - 56 : i, 5], 1e-2, hour=5
        )
        np.testing.assert_allclose(model.coefficients, direct.coefficients, atol=1e-12)
        with pytest.raises(ConfigError, match="hour"):
            fit_lear_hour(split_dataset, 24, 56, day, 1e-2)
        with pytest.raises(DataError, match="insufficient history"):
            fit_lear_hour(split_dataset, 5, 4000, day, 1e-2)


class TestModelPersistence:
    def test_round_trip_is_exact(self, dataset_220, tmp_path, rng):
        x = dataset_220.features[:60]
        saved = []
        for hour in (0, 12):
            y = dataset_220.targets[:60, hour]
            saved.append((56, fit_lasso(x, y, 1e-3, hour=hour)))
        path = tmp_path / "models.csv"
        save_lear_models(saved, path)
        loaded = load_lear_models(path)
        assert len(loaded) == 2
        for (win_a, a), (win_b, b) in zip(saved, loaded):
            assert win_a == win_b and a.hour == b.hour
            assert a.penalty == b.penalty
            np.testing.assert_array_equal(a.coefficients, b.coefficients)
            assert a.intercept == b.intercept

    def test_wrong_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("nope\n")
        with pytest.raises(DataError, match="not a model file"):
            load_lear_models(path)


def _planted_dataset(rng, n_rows=100, informative=(10, 20, 30), val_days=10):
    features = rng.normal(size=(n_rows, N_FEATURES))
    signal = 4.0 * features[:, informative[0]] - 3.0 * features[:, informative[1]]
    signal += 2.0 * features[:, informative[2]]
    targets = signal[:, None] + 0.1 * rng.normal(size=(n_rows, 24)) + 20.0
    start = date(2022, 1, 1)
    dates = [start + timedelta(days=i) for i in range(n_rows)]
    n_train = n_rows - val_days - 5
    split = np.array(
        [SPLIT_TRAIN] * n_train + [SPLIT_VALIDATION] * val_days + [SPLIT_TEST] * 5, dtype=object
    )
    return FeatureDataset(dates, features, targets, split)


class TestTuneLambda:
    def test_seeded_search_is_reproducible(self, rng):
        dataset = _planted_dataset(rng, n_rows=70, val_days=5)
        a = tune_lambda(dataset, trials=2, seed=21, window_days=40)
        b = tune_lambda(dataset, trials=2, seed=21, window_days=40)
        assert a == b

    def test_single_trial_returns_the_seeded_draw(self, rng):
        dataset = _planted_dataset(rng, n_rows=70, val_days=5)
        lo, hi = 1e-5, 1e-1
        penalty = tune_lambda(dataset, (lo, hi), trials=1, seed=33, window_days=40)
        draw = np.exp(np.random.default_rng(33).uniform(np.log(lo), np.log(hi), size=1))[0]
        np.testing.assert_allclose(penalty, draw, rtol=1e-12)

    def test_planted_support_survives_tuned_fit(self, rng):
        informative = (10, 20, 30)
        dataset = _planted_dataset(rng, n_rows=100, informative=informative, val_days=10)
        penalty = tune_lambda(dataset, trials=6, seed=2, window_days=60)
        i = len(dataset) - 1
        model = fit_lasso(
            dataset.features[i - 60 : i], dataset.targets[i - 60 : i, 0], penalty, hour=0
        )
        top3 = set(np.argsort(np.abs(model.coefficients))[-3:])
        assert top3 == set(informative)

    def test_invalid_inputs_rejected(self, rng):
        dataset = _planted_dataset(rng, n_rows=70, val_days=5)
        with pytest.raises(ConfigError):
            tune_lambda(dataset, trials=0)
        with pytest.raises(ConfigError):
            tune_lambda(dataset, (0.0, 0.1), trials=1)
        with pytest.raises(DataError, match="history"):
            tune_lambda(dataset, trials=1, window_days=1000)
