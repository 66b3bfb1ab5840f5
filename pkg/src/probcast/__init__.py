"""Probabilistic day-ahead electricity price forecasting toolkit.

Point and distributional forecasters (calibration-window lasso
ensembles, quantile regression averaging, conditional-variance and
conformal wrappers, distributional neural networks), a probabilistic
evaluation suite with forecast-skill testing, and a battery trading
backtest that turns quantile forecasts into limit orders.
"""

from probcast.baseline import HistoricalSimulation, fit_hs, fit_hs_per_hour, hs_quantiles, naive_forecast, naive_point_forecasts
from probcast.conformal import ScoreWindow, conformal_quantiles, conformalize, empirical_quantile
from probcast.data import (
    FeatureDataset,
    MarketSeries,
    Standardizer,
    build_features,
    fit_standardizer,
    ingest_csv,
    normalize_clock,
    split_by_dates,
)
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
from probcast.errors import ConfigError, DataError, NumericalError, ProbcastError
from probcast.linear import LassoModel, LearForecaster, fit_lasso, fit_lear_hour, lear_point_forecast, tune_lambda
from probcast.metrics import (
    MetricsReport,
    crps_pinball,
    daily_crps,
    dm_matrix,
    dm_test,
    evaluate,
    intervals_from_quantiles,
    maace,
    mae_rmse,
    mpiw,
    picp,
)
from probcast.neural import (
    MlpParams,
    TrainConfig,
    TrainingData,
    forward,
    gm_nll,
    init_mlp,
    mc_dropout_predict,
    nll_gaussian,
    predict_gaussian,
    random_search,
    train,
    train_ensemble,
)
from probcast.pipeline import MODEL_NAMES, PROFILES, ExperimentConfig, RunSummary, run_pipeline
from probcast.quantreg import QraForecaster, QraModel, fit_quantile_regression, pinball, pinball_loss
from probcast.synthetic import SyntheticSpec, make_synthetic
from probcast.trading import TradeLedger, backtest, perfect_foresight, plan_day, settle_day
from probcast.volatility import GarchModel, VarianceWalker, fit_garch, forecast_variance, garch_filter, garch_negloglik

__version__ = "0.1.0"

__all__ = [
    "COVERAGE_LEVELS",
    "ConfigError",
    "DataError",
    "ExperimentConfig",
    "FeatureDataset",
    "GarchModel",
    "HistoricalSimulation",
    "LassoModel",
    "LearForecaster",
    "MODEL_NAMES",
    "MarketSeries",
    "MetricsReport",
    "MixtureDistribution",
    "MlpParams",
    "NumericalError",
    "PERCENTILES",
    "PROFILES",
    "PointForecast",
    "ProbcastError",
    "QraForecaster",
    "QraModel",
    "QuantileForecast",
    "RunSummary",
    "ScoreWindow",
    "Standardizer",
    "SyntheticSpec",
    "TradeLedger",
    "TrainConfig",
    "TrainingData",
    "VarianceWalker",
    "backtest",
    "build_features",
    "conformal_quantiles",
    "conformalize",
    "crps_pinball",
    "daily_crps",
    "dm_matrix",
    "dm_test",
    "empirical_quantile",
    "equal_weight_mixture",
    "evaluate",
    "fit_garch",
    "fit_hs",
    "fit_hs_per_hour",
    "fit_lasso",
    "fit_lear_hour",
    "fit_quantile_regression",
    "fit_standardizer",
    "forecast_variance",
    "forward",
    "garch_filter",
    "garch_negloglik",
    "gaussian_percentiles",
    "gm_nll",
    "hs_quantiles",
    "ingest_csv",
    "init_mlp",
    "intervals_from_quantiles",
    "lear_point_forecast",
    "maace",
    "mae_rmse",
    "make_synthetic",
    "mc_dropout_predict",
    "mixture_cdf",
    "mixture_quantile",
    "mixture_quantile_grid",
    "mpiw",
    "naive_forecast",
    "naive_point_forecasts",
    "nll_gaussian",
    "normalize_clock",
    "perfect_foresight",
    "picp",
    "pinball",
    "pinball_loss",
    "plan_day",
    "predict_gaussian",
    "random_search",
    "run_pipeline",
    "settle_day",
    "split_by_dates",
    "to_quantile_forecast",
    "train",
    "train_ensemble",
    "tune_lambda",
]
