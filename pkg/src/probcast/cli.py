"""Command line front end.

Every verb reads a JSON experiment config (see ExperimentConfig) and
either runs a stage of the pipeline or the whole thing.  Verbs that fit
a single model family simply run the pipeline with a restricted roster;
the pipeline is deterministic, so repeated invocations rewrite the same
artifacts.  Exit codes: 0 success, 1 configuration error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from probcast.data import FIELD_NAMES
from probcast.distribution import QuantileForecast
from probcast.errors import ConfigError, DataError, NumericalError
from probcast.linear import tune_lambda
from probcast.metrics import daily_crps, dm_matrix, evaluate, write_dm_csv, write_report_csv
from probcast.neural import TrainingData, random_search
from probcast.pipeline import (
    MODEL_NAMES,
    ExperimentConfig,
    _features,
    _ingest,
    _Spans,
    run_pipeline,
)
from probcast.synthetic import SyntheticSpec, make_synthetic

CP_BASES = {"lear": "lear_cp", "ddnn": "ddnn_cp", "ens10": "ens10_cp", "mcd30": "mcd30_cp"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _out_dir(config: ExperimentConfig) -> Path:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_config(args, **overrides) -> ExperimentConfig:
    config = ExperimentConfig.from_json(args.config)
    if overrides:
        raw = config.to_dict()
        raw.update(overrides)
        config = ExperimentConfig.from_dict(raw)
    return config


def _write_series(series, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp"] + list(FIELD_NAMES))
        for rec in series.records:
            writer.writerow(
                [rec.timestamp.isoformat(sep=" ")]
                + [f"{getattr(rec, name):.6f}" for name in FIELD_NAMES]
            )


def _restricted(args, models, **overrides):
    config = _load_config(args, models=tuple(models), **overrides)
    summary = run_pipeline(config)
    for name, block in summary.models.items():
        metrics = " ".join(f"{k}={v:.4f}" for k, v in sorted(block["metrics"].items()))
        print(f"{name}: {metrics}")
    print(f"artifacts in {config.out_dir}")
    return 0


def _cmd_ingest(args) -> int:
    config = _load_config(args)
    series = _ingest(config)
    out = _out_dir(config)
    _write_series(series, out / "series.csv")
    print(f"{len(series.records)} hourly records -> {out / 'series.csv'}")
    if series.gaps:
        print(f"{len(series.gaps)} gap(s) carried as NaN")
    return 0


def _cmd_synth(args) -> int:
    config = _load_config(args)
    spec = SyntheticSpec(**config.synthetic)
    seed = config.data_seed if args.seed is None else args.seed
    series = make_synthetic(spec, seed=seed)
    out = _out_dir(config)
    _write_series(series, out / "series.csv")
    print(f"{spec.n_days} synthetic days (seed {seed}) -> {out / 'series.csv'}")
    return 0


def _cmd_features(args) -> int:
    config = _load_config(args)
    series = _ingest(config)
    dataset, _ = _features(config, series)
    out = _out_dir(config)
    dataset.to_csv(out / "dataset.csv")
    counts = {split: int(dataset.indices(split).size) for split in ("train", "validation", "test")}
    print(f"{dataset.features.shape[0]} rows {counts} -> {out / 'dataset.csv'}")
    return 0


def _cmd_tune_lambda(args) -> int:
    overrides = {}
    if args.trials is not None:
        overrides["tune_trials"] = args.trials
    if args.seed is not None:
        overrides["tune_seed"] = args.seed
    config = _load_config(args, **overrides)
    series = _ingest(config)
    dataset, _ = _features(config, series)
    prof = config.resolved()
    penalty = tune_lambda(
        dataset, trials=prof["tune_trials"], seed=config.tune_seed, window_days=max(prof["windows"])
    )
    out = _out_dir(config)
    with open(out / "tuned_lambda.json", "w") as fh:
        json.dump({"penalty": penalty}, fh, indent=2)
        fh.write("\n")
    print(f"penalty={penalty:.8f} -> {out / 'tuned_lambda.json'}")
    return 0


def _cmd_fit_lear(args) -> int:
    overrides = {}
    if args.penalty is not None:
        overrides["penalty"] = args.penalty
    return _restricted(args, ("naive", "lear"), **overrides)


def _cmd_fit_qra(args) -> int:
    return _restricted(args, ("lear", "lear_qra"))


def _cmd_fit_garch(args) -> int:
    return _restricted(args, ("lear", "lear_garch"))


def _cmd_fit_naive(args) -> int:
    hs = "naive_hs_train" if args.hs_split == "train" else "naive_hs_val"
    return _restricted(args, ("naive", hs))


def _cmd_conformalize(args) -> int:
    model = CP_BASES[args.base]
    overrides = {}
    if args.ncal is not None:
        overrides["n_cal"] = args.ncal
    return _restricted(args, (model,), **overrides)


def _cmd_train_ddnn(args) -> int:
    return _restricted(args, ("ddnn",))


def _cmd_train_ensemble(args) -> int:
    return _restricted(args, (f"ens{args.n}",))


def _cmd_train_mcd(args) -> int:
    return _restricted(args, (f"mcd{args.passes}",))


def _cmd_hpo(args) -> int:
    config = _load_config(args)
    series = _ingest(config)
    dataset, standardizer = _features(config, series)
    spans = _Spans(dataset)
    data = TrainingData(
        standardizer.transform_features(dataset.features[spans.train_idx]),
        standardizer.transform_targets(spans.y_train),
        standardizer.transform_features(dataset.features[spans.val_idx]),
        standardizer.transform_targets(spans.y_val),
    )
    prof = config.resolved()
    from probcast.neural import TrainConfig

    base = TrainConfig(
        max_epochs=prof["max_epochs"],
        patience=prof["patience"],
        hidden_units=prof["hidden_units"],
        seed=config.base_seed,
    )
    best, history = random_search(
        data, args.trials, seed=config.base_seed, dropout=args.dropout, base=base
    )
    out = _out_dir(config)
    payload = {
        "learning_rate": best.learning_rate,
        "l2": best.l2,
        "dropout_rate": best.dropout_rate,
        "trials": history,
    }
    with open(out / "hpo.json", "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    print(
        f"best: lr={best.learning_rate:.6g} l2={best.l2:.6g} "
        f"dropout={best.dropout_rate:.4f} -> {out / 'hpo.json'}"
    )
    return 0


def _cmd_forecast(args) -> int:
    config = _load_config(args)
    summary = run_pipeline(config)
    for name, block in summary.models.items():
        metrics = " ".join(f"{k}={v:.4f}" for k, v in sorted(block["metrics"].items()))
        print(f"{name}: {metrics}")
    print(f"perfect foresight profit {summary.perfect_foresight:.2f}")
    print(f"artifacts in {config.out_dir}")
    return 0


def _load_eval_pair(forecast_path, dataset_path):
    from probcast.data import FeatureDataset

    qf = QuantileForecast.from_csv(forecast_path)
    dataset = FeatureDataset.from_csv(dataset_path)
    rows = [dataset.index_of(day) for day in qf.dates]
    actual = dataset.targets[rows]
    return qf, actual


def _cmd_evaluate(args) -> int:
    qf, actual = _load_eval_pair(args.forecast, args.dataset)
    report = evaluate(qf, actual)
    name = Path(args.forecast).stem
    out_path = args.out or (str(Path(args.forecast).with_name(name + "_report.csv")))
    write_report_csv({name: report}, out_path)
    print(
        f"{name}: mae={report.mae:.4f} rmse={report.rmse:.4f} "
        f"crps={report.crps:.4f} maace={report.maace:.4f} -> {out_path}"
    )
    return 0


def _cmd_dm(args) -> int:
    if args.loss != "crps":
        raise ConfigError(f"unsupported loss {args.loss!r}; only crps is available")
    daily = {}
    for spec in args.forecast:
        if "=" not in spec:
            raise ConfigError(f"--forecast expects name=path, got {spec!r}")
        name, path = spec.split("=", 1)
        qf, actual = _load_eval_pair(path, args.dataset)
        daily[name] = daily_crps(qf, actual)
    if len(daily) < 2:
        raise ConfigError("dm needs at least two --forecast name=path entries")
    names, stats, pvals = dm_matrix(daily)
    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    write_dm_csv(names, stats, f"{prefix}_statistic.csv")
    write_dm_csv(names, pvals, f"{prefix}_pvalue.csv")
    print(f"{len(names)} models -> {prefix}_statistic.csv, {prefix}_pvalue.csv")
    return 0


def _cmd_backtest(args) -> int:
    if args.model not in MODEL_NAMES:
        raise ConfigError(f"unknown model {args.model!r}; valid: {list(MODEL_NAMES)}")
    overrides = {"trading_levels": (args.level,)}
    config = _load_config(args, models=(args.model,), **overrides)
    summary = run_pipeline(config)
    block = summary.trading.get(args.model, {}).get(str(args.level))
    if block is None:
        raise ConfigError(f"model {args.model!r} produced no tradable forecast")
    print(
        f"{args.model} level {args.level}: profit={block['profit']:.2f} "
        f"per_transaction={block['per_transaction']:.4f} "
        f"profitable_limit_days={block['profitable_limit_days']:.1f}"
    )
    print(f"perfect foresight {summary.perfect_foresight:.2f}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="probcast", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=fn)
        return p

    p = add("ingest", _cmd_ingest, "read and clock-normalize the raw hourly CSV")
    p.add_argument("--config", required=True)

    p = add("synth", _cmd_synth, "generate a synthetic market series")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)

    p = add("features", _cmd_features, "build the feature matrix and split it")
    p.add_argument("--config", required=True)

    p = add("tune-lambda", _cmd_tune_lambda, "search the lasso penalty on validation MAE")
    p.add_argument("--config", required=True)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)

    p = add("fit-lear", _cmd_fit_lear, "fit the calibration-window lasso ensemble")
    p.add_argument("--config", required=True)
    p.add_argument("--lambda", dest="penalty", type=float, default=None)

    p = add("fit-qra", _cmd_fit_qra, "quantile regression averaging on the lasso members")
    p.add_argument("--config", required=True)

    p = add("fit-garch", _cmd_fit_garch, "conditional-variance wrapper on lasso residuals")
    p.add_argument("--config", required=True)

    p = add("fit-naive", _cmd_fit_naive, "seasonal naive with historical-simulation bands")
    p.add_argument("--config", required=True)
    p.add_argument("--hs-split", choices=("train", "val"), default="train")

    p = add("conformalize", _cmd_conformalize, "conformal bands around a point forecaster")
    p.add_argument("--config", required=True)
    p.add_argument("--base", choices=sorted(CP_BASES), default="lear")
    p.add_argument("--ncal", type=int, default=None)

    p = add("train-ddnn", _cmd_train_ddnn, "train the distributional network")
    p.add_argument("--config", required=True)

    p = add("train-ensemble", _cmd_train_ensemble, "train a deep ensemble")
    p.add_argument("--config", required=True)
    p.add_argument("--n", type=int, choices=(5, 10), default=5)

    p = add("train-mcd", _cmd_train_mcd, "train a dropout network for MC sampling")
    p.add_argument("--config", required=True)
    p.add_argument("--passes", type=int, choices=(10, 30), default=10)

    p = add("hpo", _cmd_hpo, "random search over learning rate, weight decay, dropout")
    p.add_argument("--config", required=True)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--dropout", action="store_true")

    p = add("forecast", _cmd_forecast, "run the full configured pipeline")
    p.add_argument("--config", required=True)

    p = add("evaluate", _cmd_evaluate, "score a stored quantile forecast against actuals")
    p.add_argument("--forecast", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", default=None)

    p = add("dm", _cmd_dm, "pairwise forecast-skill tests on stored forecasts")
    p.add_argument("--dataset", required=True)
    p.add_argument("--forecast", action="append", required=True, metavar="NAME=PATH")
    p.add_argument("--loss", default="crps")
    p.add_argument("--out-prefix", default="dm")

    p = add("backtest", _cmd_backtest, "battery trading backtest for one model")
    p.add_argument("--config", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--level", type=int, default=90)

    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
