"""Experiment orchestration: data to reports in seeded, restartable stages.

run_pipeline drives ingest -> features -> model fitting -> forecasting
-> evaluation -> pairwise skill tests -> trading backtest, writing every
artifact (dataset, model files, forecasts, report tables, DM matrices,
coverage/width curves, trade ledgers, a JSON summary) under the
configured output directory.  All randomness flows from the config's
seeds; rerunning an unchanged config reproduces every file byte for
byte.  Stochastic models run n_runs times with derived seeds and report
mean and standard deviation per metric; deterministic models run once
and report a 0.000 deviation, and any stage failure is re-raised naming
the stage.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, fields, replace
from datetime import date
from pathlib import Path

import numpy as np

from probcast import baseline, conformal
from probcast.data import (
    DEFAULT_TIMEZONE,
    SPLIT_TEST,
    SPLIT_TRAIN,
    SPLIT_VALIDATION,
    build_features,
    daily_price_table,
    fit_standardizer,
    ingest_csv,
    normalize_clock,
    split_by_dates,
)
from probcast.distribution import (
    COVERAGE_LEVELS,
    PointForecast,
    QuantileForecast,
    gaussian_percentiles,
    mixture_quantile_grid,
)
from probcast.errors import ConfigError, DataError, ProbcastError
from probcast.linear import DEFAULT_WINDOWS, LearForecaster, fit_lear_hour, save_lear_models, tune_lambda
from probcast.metrics import daily_crps, dm_matrix, evaluate, mae_rmse, write_dm_csv, write_report_csv
from probcast.neural import TrainConfig, TrainingData, mc_dropout_forward, predict_gaussian, save_mlp, train, train_ensemble
from probcast.quantreg import QraForecaster, save_qra_models
from probcast.synthetic import SyntheticSpec, make_synthetic
from probcast.trading import backtest, fixed_hours_backtest, perfect_foresight, save_ledger, unlimited_bids_backtest
from probcast.volatility import VarianceWalker, fit_garch, save_garch_models

MODEL_NAMES = (
    "naive",
    "naive_hs_train",
    "naive_hs_val",
    "lear",
    "lear_qra",
    "lear_garch",
    "lear_cp",
    "ddnn",
    "ens5",
    "ens10",
    "mcd10",
    "mcd30",
    "ddnn_cp",
    "ens10_cp",
    "mcd30_cp",
)
POINT_ONLY_MODELS = frozenset({"naive", "lear"})
STOCHASTIC_MODELS = frozenset(
    {"ddnn", "ens5", "ens10", "mcd10", "mcd30", "ddnn_cp", "ens10_cp", "mcd30_cp"}
)
LEAR_BASED = frozenset({"lear", "lear_qra", "lear_garch", "lear_cp"})

PROFILES = {
    "paper": {
        "windows": DEFAULT_WINDOWS,
        "hidden_units": 1024,
        "max_epochs": 2000,
        "patience": 100,
        "n_cal": 182,
        "tune_trials": 100,
    },
    "desk": {
        "windows": (56, 84, 180, 360),
        "hidden_units": 64,
        "max_epochs": 200,
        "patience": 50,
        "n_cal": 100,
        "tune_trials": 16,
    },
}

SCALAR_METRICS = (
    "mae",
    "rmse",
    "crps",
    "maace",
    "picp_50",
    "picp_90",
    "picp_98",
    "mpiw_50",
    "mpiw_90",
    "mpiw_98",
)


@dataclass
class ExperimentConfig:
    """Everything a pipeline run needs; schema-validated on construction."""

    out_dir: str
    train_range: tuple
    validation_range: tuple
    test_range: tuple
    data_csv: str | None = None
    data_schema: dict | None = None
    timezone_rule: str = DEFAULT_TIMEZONE
    synthetic: dict = field(default_factory=dict)
    data_seed: int = 7
    models: tuple = MODEL_NAMES
    n_runs: int = 10
    base_seed: int = 0
    profile: str = "paper"
    windows: tuple | None = None
    penalty: float | None = None
    tune_trials: int | None = None
    tune_seed: int = 11
    n_cal: int | None = None
    hs_per_hour: bool = False
    learning_rate: float = 1e-3
    l2: float = 1e-4
    dropout_rate: float = 0.1
    batch_size: int = 32
    hidden_units: int | None = None
    max_epochs: int | None = None
    patience: int | None = None
    trading_levels: tuple = (50, 80, 90, 98)
    efficiency: float = 0.9

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown profile {self.profile!r}; choose from {sorted(PROFILES)}")
        self.models = tuple(self.models)
        unknown = [m for m in self.models if m not in MODEL_NAMES]
        if unknown:
            raise ConfigError(f"unknown model name(s) {unknown}; valid: {list(MODEL_NAMES)}")
        if not self.models:
            raise ConfigError("model roster is empty")
        if self.n_runs < 1:
            raise ConfigError("n_runs must be positive")
        for name in ("train_range", "validation_range", "test_range"):
            rng = getattr(self, name)
            if len(rng) != 2 or not all(isinstance(d, date) for d in rng):
                raise ConfigError(f"{name} must be a (start, end) date pair")
            setattr(self, name, tuple(rng))
        self.trading_levels = tuple(int(lv) for lv in self.trading_levels)
        bad = [lv for lv in self.trading_levels if lv not in COVERAGE_LEVELS]
        if bad:
            raise ConfigError(f"trading levels must be even integers in [2, 98]: {bad}")
        if not 0.0 < self.efficiency <= 1.0:
            raise ConfigError("efficiency must be in (0, 1]")
        if self.data_csv is None and self.synthetic is None:
            raise ConfigError("either data_csv or synthetic generator settings are required")

    def resolved(self) -> dict:
        """Profile defaults with explicit overrides applied."""
        prof = dict(PROFILES[self.profile])
        for key in ("windows", "n_cal", "tune_trials", "hidden_units", "max_epochs", "patience"):
            if getattr(self, key) is not None:
                prof[key] = getattr(self, key)
        prof["windows"] = tuple(int(w) for w in prof["windows"])
        return prof

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = [x.isoformat() if isinstance(x, date) else x for x in v]
            out[f.name] = v
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw)
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
        for name in ("train_range", "validation_range", "test_range"):
            if name in raw:
                raw[name] = tuple(
                    date.fromisoformat(d) if isinstance(d, str) else d for d in raw[name]
                )
        for name in ("models", "windows", "trading_levels"):
            if name in raw and raw[name] is not None:
                raw[name] = tuple(raw[name])
        return cls(**raw)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(raw)


@dataclass
class RunSummary:
    models: dict
    trading: dict
    perfect_foresight: float
    dm: dict

    def to_json(self, path) -> None:
        payload = {
            "models": self.models,
            "trading": self.trading,
            "perfect_foresight": self.perfect_foresight,
            "dm": self.dm,
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _run_stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ProbcastError as exc:
        raise type(exc)(f"stage {name}: {exc}") from exc


def _model_seed(config: ExperimentConfig, slot_name: str, run: int, salt: int = 0) -> int:
    slot = MODEL_NAMES.index(slot_name)
    seq = np.random.SeedSequence([config.base_seed, slot, run, salt])
    return int(seq.generate_state(1)[0])


def _ingest(config: ExperimentConfig):
    if config.data_csv is not None:
        series = ingest_csv(config.data_csv, schema=config.data_schema, timezone_rule=config.timezone_rule)
        return normalize_clock(series)
    spec = SyntheticSpec(**config.synthetic)
    return make_synthetic(spec, seed=config.data_seed)


def _features(config: ExperimentConfig, series):
    dataset = build_features(series)
    dataset = split_by_dates(dataset, config.train_range, config.validation_range, config.test_range)
    standardizer = fit_standardizer(dataset)
    return dataset, standardizer


class _Spans:
    """Index bookkeeping for the three splits."""

    def __init__(self, dataset):
        self.dataset = dataset
        self.train_idx = dataset.indices(SPLIT_TRAIN)
        self.val_idx = dataset.indices(SPLIT_VALIDATION)
        self.test_idx = dataset.indices(SPLIT_TEST)
        for name, idx in (("train", self.train_idx), ("validation", self.val_idx), ("test", self.test_idx)):
            if idx.size == 0:
                raise DataError(f"{name} split selects no rows")
        self.train_dates = [dataset.dates[i] for i in self.train_idx]
        self.val_dates = [dataset.dates[i] for i in self.val_idx]
        self.test_dates = [dataset.dates[i] for i in self.test_idx]
        self.y_train = dataset.targets[self.train_idx]
        self.y_val = dataset.targets[self.val_idx]
        self.y_test = dataset.targets[self.test_idx]


def _naive_points(series, spans):
    table = daily_price_table(series)
    return {
        "train": baseline.naive_point_forecasts(table, spans.train_dates).values,
        "val": baseline.naive_point_forecasts(table, spans.val_dates).values,
        "test": baseline.naive_point_forecasts(table, spans.test_dates).values,
    }


def _lear_forecasts(config, dataset, spans, prof):
    windows = prof["windows"]
    penalty = config.penalty
    if penalty is None:
        penalty = tune_lambda(
            dataset,
            trials=prof["tune_trials"],
            seed=config.tune_seed,
            window_days=max(windows),
        )
    engine = LearForecaster(dataset, penalty, windows)
    members_val, mean_val = engine.forecast_indices(spans.val_idx)
    members_test, mean_test = engine.forecast_indices(spans.test_idx)
    return {
        "penalty": penalty,
        "members_val": members_val,
        "mean_val": mean_val,
        "members_test": members_test,
        "mean_test": mean_test,
    }


def _hs_quantile_values(hs_models, point_values, per_hour):
    if not per_hour:
        return baseline.hs_quantiles(point_values, hs_models)
    out = np.empty((point_values.shape[0], 24, 99))
    for h in range(24):
        out[:, h, :] = baseline.hs_quantiles(point_values[:, h], hs_models[h])
    return out


def _train_config(config, prof, seed):
    return TrainConfig(
        learning_rate=config.learning_rate,
        l2=config.l2,
        dropout_rate=0.0,
        batch_size=config.batch_size,
        max_epochs=prof["max_epochs"],
        patience=prof["patience"],
        seed=seed,
        hidden_units=prof["hidden_units"],
    )


class _NeuralRun:
    """All network forecasts of one seeded run, in price units."""

    def __init__(self, config, prof, spans, standardizer, run, needed):
        self.run = run
        x_train = standardizer.transform_features(spans.dataset.features[spans.train_idx])
        y_train = standardizer.transform_targets(spans.y_train)
        x_val = standardizer.transform_features(spans.dataset.features[spans.val_idx])
        y_val = standardizer.transform_targets(spans.y_val)
        x_test = standardizer.transform_features(spans.dataset.features[spans.test_idx])
        data = TrainingData(x_train, y_train, x_val, y_val)
        self.x_val = x_val
        self.x_test = x_test
        self.n_val = x_val.shape[0]
        self._tmean = standardizer.target_mean
        self._tstd = standardizer.target_std
        self.params = {}
        if "ddnn" in needed:
            cfg = _train_config(config, prof, _model_seed(config, "ddnn", run))
            self.params["ddnn"] = train(data, cfg)
        if "ens5" in needed:
            cfg = _train_config(config, prof, _model_seed(config, "ens5", run))
            self.params["ens5"] = train_ensemble(data, cfg, 5)
        if "ens10" in needed:
            cfg = _train_config(config, prof, _model_seed(config, "ens10", run))
            self.params["ens10"] = train_ensemble(data, cfg, 10)
        if "mcd" in needed:
            cfg = _train_config(config, prof, _model_seed(config, "mcd10", run))
            cfg = replace(cfg, dropout_rate=config.dropout_rate)
            self.params["mcd"] = cfg, train(data, cfg)

    def rescale(self, mu, sigma):
        """Back to price units; per-hour scale sits on axis 1 for stacked heads."""
        tmean, tstd = self._tmean, self._tstd
        if mu.ndim == 3:
            tmean, tstd = tmean[:, None], tstd[:, None]
        return mu * tstd + tmean, sigma * tstd

    def gaussian_spans(self):
        """DDNN (mu, sigma) on validation and test rows, price units."""
        mu_v, sg_v = predict_gaussian(self.params["ddnn"], self.x_val)
        mu_t, sg_t = predict_gaussian(self.params["ddnn"], self.x_test)
        return self.rescale(mu_v, sg_v), self.rescale(mu_t, sg_t)

    def ensemble_spans(self, which):
        members = self.params[which]
        out = []
        for x in (self.x_val, self.x_test):
            mus, sigmas = zip(*(predict_gaussian(m, x) for m in members))
            mu = np.stack(mus, axis=-1)
            sigma = np.stack(sigmas, axis=-1)
            mu, sigma = self.rescale(mu, sigma)
            out.append((mu, sigma))
        return out

    def mcd_spans(self, passes, config):
        cfg, params = self.params["mcd"]
        seed = _model_seed(config, "mcd10", self.run, salt=passes)
        x_all = np.vstack([self.x_val, self.x_test])
        mus, sigmas = mc_dropout_forward(params, x_all, passes, cfg.dropout_rate, seed)
        mu = np.moveaxis(mus, -2, -1)
        sigma = np.moveaxis(sigmas, -2, -1)
        mu, sigma = self.rescale(mu, sigma)
        return (mu[: self.n_val], sigma[: self.n_val]), (mu[self.n_val :], sigma[self.n_val :])


def _mixture_qf(dates, mu, sigma) -> QuantileForecast:
    if mu.ndim == 2:
        values = gaussian_percentiles(mu, sigma)
    else:
        values = mixture_quantile_grid(mu, sigma)
    return QuantileForecast(list(dates), values)


def _mixture_point(mu) -> np.ndarray:
    return mu if mu.ndim == 2 else mu.mean(axis=-1)


def run_pipeline(config: ExperimentConfig) -> RunSummary:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "forecasts").mkdir(exist_ok=True)
    (out / "ledgers").mkdir(exist_ok=True)
    (out / "params").mkdir(exist_ok=True)
    prof = config.resolved()

    series = _run_stage("ingest", _ingest, config)
    dataset, standardizer = _run_stage("features", _features, config, series)
    dataset.to_csv(out / "dataset.csv")
    spans = _Spans(dataset)
    roster = config.models

    # point models
    naive = _run_stage("fit-naive", _naive_points, series, spans)
    lear = None
    if roster_needs_lear(roster):
        lear = _run_stage("fit-lear", _lear_forecasts, config, dataset, spans, prof)

    # model forecasts: name -> list over runs of (QuantileForecast, point values)
    forecasts = {}
    points = {}

    if "naive" in roster:
        points["naive"] = naive["test"]
    if lear is not None and "lear" in roster:
        points["lear"] = lear["mean_test"]

    def _stat_models():
        if "naive_hs_train" in roster:
            hs = _fit_hs_models(config, naive["train"], spans.y_train, "train")
            values = _hs_quantile_values(hs, naive["test"], config.hs_per_hour)
            forecasts["naive_hs_train"] = [QuantileForecast(spans.test_dates, values)]
            points["naive_hs_train"] = naive["test"]
        if "naive_hs_val" in roster:
            hs = _fit_hs_models(config, naive["val"], spans.y_val, "validation")
            values = _hs_quantile_values(hs, naive["test"], config.hs_per_hour)
            forecasts["naive_hs_val"] = [QuantileForecast(spans.test_dates, values)]
            points["naive_hs_val"] = naive["test"]
        if "lear_qra" in roster:
            qra = QraForecaster.fit(lear["members_val"], spans.y_val)
            forecasts["lear_qra"] = [qra.predict(spans.test_dates, lear["members_test"])]
            points["lear_qra"] = lear["mean_test"]
            save_qra_models(qra, out / "qra_models.csv")
        if "lear_garch" in roster:
            resid_val = spans.y_val - lear["mean_val"]
            resid_test = spans.y_test - lear["mean_test"]
            models = [fit_garch(resid_val[:, h], h, seed=_model_seed(config, "lear_garch", 0, h)) for h in range(24)]
            sigma = np.empty_like(lear["mean_test"])
            walkers = [VarianceWalker(models[h], resid_val[:, h]) for h in range(24)]
            for d in range(sigma.shape[0]):
                for h in range(24):
                    sigma[d, h] = np.sqrt(walkers[h].predict())
                    walkers[h].update(resid_test[d, h])
            values = gaussian_percentiles(lear["mean_test"], sigma)
            forecasts["lear_garch"] = [QuantileForecast(spans.test_dates, values)]
            points["lear_garch"] = lear["mean_test"]
            save_garch_models(models, out / "garch_models.csv")
        if "lear_cp" in roster:
            qf = conformal.conformalize(
                lear["mean_val"], spans.y_val, lear["mean_test"], spans.y_test, spans.test_dates, prof["n_cal"]
            )
            forecasts["lear_cp"] = [qf]
            points["lear_cp"] = lear["mean_test"]

    _run_stage("fit-uncertainty", _stat_models)

    needed = set()
    if {"ddnn", "ddnn_cp"} & set(roster):
        needed.add("ddnn")
    if "ens5" in roster:
        needed.add("ens5")
    if {"ens10", "ens10_cp"} & set(roster):
        needed.add("ens10")
    if {"mcd10", "mcd30", "mcd30_cp"} & set(roster):
        needed.add("mcd")

    def _neural_models():
        nn_names = [m for m in roster if m in STOCHASTIC_MODELS]
        for name in nn_names:
            forecasts[name] = []
        run_points = {name: [] for name in nn_names}
        for run in range(config.n_runs):
            nr = _NeuralRun(config, prof, spans, standardizer, run, needed)
            produced = {}
            if "ddnn" in needed:
                (mu_v, sg_v), (mu_t, sg_t) = nr.gaussian_spans()
                produced["ddnn"] = (mu_v, sg_v, mu_t, sg_t)
            if "ens5" in needed:
                (mu_v, sg_v), (mu_t, sg_t) = nr.ensemble_spans("ens5")
                produced["ens5"] = (mu_v, sg_v, mu_t, sg_t)
            if "ens10" in needed:
                (mu_v, sg_v), (mu_t, sg_t) = nr.ensemble_spans("ens10")
                produced["ens10"] = (mu_v, sg_v, mu_t, sg_t)
            if "mcd" in needed:
                for passes in (10, 30):
                    key = f"mcd{passes}"
                    if key in roster or (passes == 30 and "mcd30_cp" in roster):
                        (mu_v, sg_v), (mu_t, sg_t) = nr.mcd_spans(passes, config)
                        produced[key] = (mu_v, sg_v, mu_t, sg_t)
            for name in nn_names:
                base_key = {"ddnn_cp": "ddnn", "ens10_cp": "ens10", "mcd30_cp": "mcd30"}.get(name, name)
                mu_v, sg_v, mu_t, sg_t = produced[base_key]
                point_v = _mixture_point(mu_v)
                point_t = _mixture_point(mu_t)
                if name.endswith("_cp"):
                    qf = conformal.conformalize(
                        point_v, spans.y_val, point_t, spans.y_test, spans.test_dates, prof["n_cal"]
                    )
                else:
                    qf = _mixture_qf(spans.test_dates, mu_t, sg_t)
                forecasts[name].append(qf)
                run_points[name].append(point_t)
            if run == 0:
                if "ddnn" in needed:
                    save_mlp(nr.params["ddnn"], out / "params" / "ddnn_run0.npz")
                if "mcd" in needed:
                    save_mlp(nr.params["mcd"][1], out / "params" / "mcd_run0.npz")
                for which in ("ens5", "ens10"):
                    if which in needed:
                        for k, member in enumerate(nr.params[which]):
                            save_mlp(member, out / "params" / f"{which}_member{k}_run0.npz")
        for name in nn_names:
            points[name] = run_points[name]

    if needed:
        _run_stage("train-networks", _neural_models)

    # artifacts for the point models
    if "naive" in roster or any(m.startswith("naive_hs") for m in roster):
        PointForecast(spans.test_dates, naive["test"]).to_csv(out / "naive_point.csv")
    if lear is not None:
        PointForecast(spans.test_dates, lear["mean_test"]).to_csv(out / "lear_point.csv")
        first_test = spans.test_dates[0]
        saved = []
        for window in prof["windows"]:
            for hour in range(24):
                saved.append((window, fit_lear_hour(dataset, hour, window, first_test, lear["penalty"])))
        save_lear_models(saved, out / "lear_models.csv")
    for name, qfs in forecasts.items():
        qfs[0].to_csv(out / "forecasts" / f"{name}_run0.csv")

    summary_models, reports_for_csv, curve_rows = _run_stage(
        "evaluate", _evaluate_stage, config, roster, forecasts, points, spans
    )
    _write_curves(curve_rows, out / "curves.csv")
    write_report_csv(reports_for_csv, out / "report.csv")

    dm_payload = _run_stage("dm", _dm_stage, forecasts, spans, out)

    trading_summary, pf_profit = _run_stage(
        "backtest", _trading_stage, config, forecasts, points, spans, naive, lear, out
    )

    summary = RunSummary(summary_models, trading_summary, pf_profit, dm_payload)
    summary.to_json(out / "summary.json")
    return summary


def roster_needs_lear(roster) -> bool:
    return bool(LEAR_BASED & set(roster))


def _fit_hs_models(config, naive_points, actual, split_name):
    errors = actual - naive_points
    if config.hs_per_hour:
        return baseline.fit_hs_per_hour(errors, split_name)
    return baseline.fit_hs(errors, split_name)


def _aggregate(values_per_run):
    arr = np.asarray(values_per_run, dtype=float)
    return float(arr.mean()), float(arr.std())


def _evaluate_stage(config, roster, forecasts, points, spans):
    summary_models = {}
    reports_for_csv = {}
    curve_rows = []
    actual = spans.y_test
    for name in roster:
        if name in POINT_ONLY_MODELS:
            pts = points.get(name)
            if pts is None:
                continue
            mae, rmse = mae_rmse(pts, actual)
            summary_models[name] = {
                "metrics": {"mae": mae, "rmse": rmse},
                "std": {"mae": 0.0, "rmse": 0.0},
                "n_runs": 1,
            }
            reports_for_csv[name] = {"mae": mae, "rmse": rmse, "mae_std": 0.0, "rmse_std": 0.0}
            continue
        if name not in forecasts:
            continue
        qfs = forecasts[name]
        pts = points[name]
        pts_runs = pts if isinstance(pts, list) else [pts] * len(qfs)
        reports = [evaluate(qf, actual, point=p) for qf, p in zip(qfs, pts_runs)]
        per_metric = {}
        for key in SCALAR_METRICS:
            vals = [_report_scalar(rep, key) for rep in reports]
            per_metric[key] = _aggregate(vals)
        summary_models[name] = {
            "metrics": {k: v[0] for k, v in per_metric.items()},
            "std": {k: v[1] for k, v in per_metric.items()},
            "n_runs": len(reports),
        }
        mean_report = _mean_report(reports)
        std_stub = _std_report(reports)
        reports_for_csv[name] = (mean_report, std_stub)
        for level in COVERAGE_LEVELS:
            picp_mean = float(np.mean([rep.picp_by_level[level] for rep in reports]))
            mpiw_mean = float(np.mean([rep.mpiw_by_level[level] for rep in reports]))
            curve_rows.append((name, level, picp_mean, mpiw_mean))
    return summary_models, reports_for_csv, curve_rows


def _report_scalar(rep, key):
    if key.startswith("picp_"):
        return rep.picp_by_level[int(key.split("_")[1])]
    if key.startswith("mpiw_"):
        return rep.mpiw_by_level[int(key.split("_")[1])]
    return getattr(rep, key)


def _mean_report(reports):
    from probcast.metrics import MetricsReport

    return MetricsReport(
        float(np.mean([r.mae for r in reports])),
        float(np.mean([r.rmse for r in reports])),
        float(np.mean([r.crps for r in reports])),
        float(np.mean([r.maace for r in reports])),
        {lv: float(np.mean([r.picp_by_level[lv] for r in reports])) for lv in COVERAGE_LEVELS},
        {lv: float(np.mean([r.mpiw_by_level[lv] for r in reports])) for lv in COVERAGE_LEVELS},
    )


class _StdStub:
    def __init__(self, reports):
        self.mae = float(np.std([r.mae for r in reports]))
        self.rmse = float(np.std([r.rmse for r in reports]))
        self.crps = float(np.std([r.crps for r in reports]))
        self.maace = float(np.std([r.maace for r in reports]))


def _std_report(reports):
    return _StdStub(reports)


def _write_curves(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "level", "picp", "mpiw"])
        for name, level, p, w in rows:
            writer.writerow([name, level, f"{p:.6f}", f"{w:.6f}"])


def _dm_stage(forecasts, spans, out):
    if len(forecasts) < 2:
        return {"names": list(forecasts), "statistic": [], "p_value": []}
    daily = {}
    for name, qfs in forecasts.items():
        series = np.mean([daily_crps(qf, spans.y_test) for qf in qfs], axis=0)
        daily[name] = series
    names, stats, pvals = dm_matrix(daily)
    write_dm_csv(names, stats, out / "dm_statistic.csv")
    write_dm_csv(names, pvals, out / "dm_pvalue.csv")
    return {
        "names": names,
        "statistic": [[float(v) for v in row] for row in stats],
        "p_value": [[float(v) for v in row] for row in pvals],
    }


def _trading_stage(config, forecasts, points, spans, naive, lear, out):
    actual = spans.y_test
    pf_profit = perfect_foresight(actual, config.efficiency)
    trading_summary = {}
    rows = []
    for name, qfs in forecasts.items():
        pts = points[name]
        pts_runs = pts if isinstance(pts, list) else [pts] * len(qfs)
        trading_summary[name] = {}
        for level in config.trading_levels:
            ledgers = [
                backtest(qf, p, actual, level, config.efficiency)
                for qf, p in zip(qfs, pts_runs)
            ]
            profit_mean, profit_std = _aggregate([l.total_profit for l in ledgers])
            per_tx_mean, _ = _aggregate([l.per_transaction_profit for l in ledgers])
            days_mean, _ = _aggregate([l.profitable_limit_days for l in ledgers])
            trades_mean, _ = _aggregate([len(l.trades) for l in ledgers])
            trading_summary[name][str(level)] = {
                "profit": profit_mean,
                "profit_std": profit_std,
                "per_transaction": per_tx_mean,
                "profitable_limit_days": days_mean,
                "n_trades": trades_mean,
            }
            rows.append(
                [name, level, f"{profit_mean:.4f}", f"{profit_std:.4f}", f"{per_tx_mean:.4f}",
                 f"{days_mean:.2f}", f"{trades_mean:.2f}"]
            )
            save_ledger(ledgers[0], out / "ledgers" / f"{name}_level{level}_run0.csv")
    point_for_bids = None
    if lear is not None:
        point_for_bids = lear["mean_test"]
    elif naive is not None:
        point_for_bids = naive["test"]
    comparison = {}
    fixed = fixed_hours_backtest(actual, spans.test_dates, efficiency=config.efficiency)
    comparison["fixed_hours"] = fixed.total_profit
    rows.append(["fixed_hours", "", f"{fixed.total_profit:.4f}", "", "", "", ""])
    if point_for_bids is not None:
        bids = unlimited_bids_backtest(point_for_bids, actual, spans.test_dates, efficiency=config.efficiency)
        comparison["unlimited_bids"] = bids.total_profit
        rows.append(["unlimited_bids", "", f"{bids.total_profit:.4f}", "", "", "", ""])
    rows.append(["perfect_foresight", "", f"{pf_profit:.4f}", "", "", "", ""])
    with open(out / "trading.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["model", "level", "profit", "profit_std", "per_transaction", "profitable_limit_days", "n_trades"]
        )
        writer.writerows(rows)
    trading_summary["comparison"] = comparison
    return trading_summary, float(pf_profit)
