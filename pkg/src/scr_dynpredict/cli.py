"""Command-line entry point: ``scr-dynpredict <subcommand> [flags]``.

Every flag can also come from a TOML file given with ``--config``.  Top-level
keys apply to all subcommands, a ``[<subcommand>]`` table only to that one,
and keys use the flag's long name with dashes or underscores.  Flags given on
the command line win.

Exit codes: 0 success, 1 usage error, 2 data or model error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from dataclasses import replace

import numpy as np

from . import dataset as ds
from .dataset import SCR_INTERNAL, UNIT_LEVEL, DataError, SchemaError
from .feature_select import TreeParams, feature_importances, select_features
from .mic_delay import DelayMap, estimate_delays, reconstruct
from .pipeline import (HIDDEN_GRID, PipelineConfig, PipelineError, PipelineModel, ablate, fit,
                       predict, save_rows_csv, sensitivity, tune_hidden)
from .vmd import VmdConfig, decompose, prune_last_mode, select_mode_count


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _load_toml(path):
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    with open(path, "rb") as fh:
        return tomllib.load(fh)


# ------------------------------------------------------------------ flag sets


def _data_flags(p, out_help="output path"):
    # --in/--out are checked after parsing so that a --config file can supply them
    p.add_argument("--in", dest="input", help="input CSV with a header of column labels")
    p.add_argument("--target", default=ds.TARGET, help="target column label")
    p.add_argument("--out", help=out_help)


def _split_flags(p):
    p.add_argument("--n-train", type=int, default=None,
                   help="rows used for fitting; default is --train-fraction of the rows")
    p.add_argument("--train-fraction", type=float, default=0.8,
                   help="training share when --n-train is not given")


def _pipeline_flags(p):
    p.add_argument("--seed", type=int, default=None, help="seed for every random stage")
    for name, text in (("delay", "MIC delay reconstruction"), ("select", "feature selection"),
                       ("vmd", "VMD of Q"), ("ec", "error correction")):
        p.add_argument(f"--{name}", action=argparse.BooleanOptionalAction, default=True,
                       help=text)
    p.add_argument("--k-max-internal", type=int, default=60,
                   help="max lag (samples) for scr_internal variables")
    p.add_argument("--k-max-unit", type=int, default=30,
                   help="max lag (samples) for unit_level variables")
    p.add_argument("--b-exponent", type=float, default=0.6, help="MIC grid bound exponent")
    p.add_argument("--threshold", type=float, default=0.2, help="combined-importance cutoff")
    p.add_argument("--forced", default="NOx", help="comma-separated labels always kept")
    p.add_argument("--n-trees", type=int, default=100, help="forest size")
    p.add_argument("--gbt-rounds", type=int, default=100, help="boosting rounds")
    p.add_argument("--alpha", type=float, default=2000.0, help="VMD bandwidth penalty")
    p.add_argument("--tau", type=float, default=0.0, help="VMD dual step")
    p.add_argument("--tol", type=float, default=1e-7, help="VMD convergence tolerance")
    p.add_argument("--max-iter", type=int, default=500, help="VMD iteration cap")
    p.add_argument("--corr-threshold", type=float, default=0.1,
                   help="mode-count stopping correlation")
    p.add_argument("--k-cap", type=int, default=12, help="largest mode count tried")
    p.add_argument("--hidden", type=int, default=100, help="initial ELM hidden units")
    p.add_argument("--tune-hidden", action="store_true",
                   help=f"choose --hidden from {list(HIDDEN_GRID)} by validation MAPE")
    p.add_argument("--ec-hidden", type=int, default=100, help="error-correction ELM hidden units")
    p.add_argument("--ridge", type=float, default=1e-8, help="ELM ridge (0 = pseudoinverse)")
    p.add_argument("--activation", choices=("tanh", "sigmoid"), default="tanh",
                   help="ELM activation")
    p.add_argument("--feedback", choices=("measured", "recursive"), default="measured",
                   help="error source for the correction lags at test time")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="scr-dynpredict", formatter_class=fmt,
                     description="Delay-aware EC-VMD-ELM soft sensor for SCR outlet NOx.")
    parser.add_argument("--config", default=None, help="TOML file with flag values")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="command")
    sub.required = True

    p = sub.add_parser("synth", help="write a synthetic plant record", formatter_class=fmt)
    p.add_argument("--seed", type=int, default=0, help="generator seed")
    p.add_argument("--n", type=int, default=4000, help="rows")
    p.add_argument("--noise-sigma", type=float, default=0.1, help="noise std / response std")
    p.add_argument("--noise-ar", type=float, default=0.0, help="AR(1) coefficient of the noise")
    p.add_argument("--synth-config", default=None, help="TOML generator config (n, seed, delays.<label>, ...)")
    p.add_argument("--out", default="synthetic.csv", help="output CSV")
    p.add_argument("--truth", default=None, help="optional ground-truth JSON path")

    p = sub.add_parser("clean", help="replace 3-sigma outliers", formatter_class=fmt)
    _data_flags(p)
    p.add_argument("--sigma-k", type=float, default=3.0, help="outlier threshold in std units")
    p.add_argument("--lookback", type=int, default=5, help="accepted values averaged per outlier")

    p = sub.add_parser("delays", help="MIC delay per input variable", formatter_class=fmt)
    _data_flags(p, "delay map JSON")
    _split_flags(p)
    p.add_argument("--k-max-internal", type=int, default=60, help="max lag for scr_internal")
    p.add_argument("--k-max-unit", type=int, default=30, help="max lag for unit_level")
    p.add_argument("--b-exponent", type=float, default=0.6, help="MIC grid bound exponent")
    p.add_argument("--all-rows", action="store_true", help="search on every row, not the training split")

    p = sub.add_parser("select", help="combined tree importances and selection",
                       formatter_class=fmt)
    _data_flags(p, "importance report JSON")
    _split_flags(p)
    p.add_argument("--delays", default=None, help="delay map JSON to reconstruct with first")
    p.add_argument("--csv", default=None, help="two-column (label, combined) CSV path")
    p.add_argument("--seed", type=int, default=0, help="forest seed")
    p.add_argument("--threshold", type=float, default=0.2, help="combined-importance cutoff")
    p.add_argument("--forced", default="NOx", help="comma-separated labels always kept")
    p.add_argument("--n-trees", type=int, default=100, help="forest size")
    p.add_argument("--gbt-rounds", type=int, default=100, help="boosting rounds")

    p = sub.add_parser("decompose", help="VMD of one column", formatter_class=fmt)
    _data_flags(p, "modes CSV (one column per IMF)")
    _split_flags(p)
    p.add_argument("--column", default="Q", help="column to decompose")
    p.add_argument("--K", type=int, default=None, help="fixed mode count (default: search)")
    p.add_argument("--omegas", default=None, help="centre-frequency JSON path")
    p.add_argument("--prune", action=argparse.BooleanOptionalAction, default=True,
                   help="drop the last mode")
    p.add_argument("--alpha", type=float, default=2000.0, help="bandwidth penalty")
    p.add_argument("--tau", type=float, default=0.0, help="dual step")
    p.add_argument("--tol", type=float, default=1e-7, help="convergence tolerance")
    p.add_argument("--max-iter", type=int, default=500, help="iteration cap")
    p.add_argument("--corr-threshold", type=float, default=0.1, help="stopping correlation")
    p.add_argument("--k-cap", type=int, default=12, help="largest mode count tried")

    p = sub.add_parser("train", help="fit the full pipeline", formatter_class=fmt)
    _data_flags(p, "model JSON")
    _split_flags(p)
    _pipeline_flags(p)

    p = sub.add_parser("evaluate", help="one-step-ahead test metrics", formatter_class=fmt)
    _data_flags(p, "metrics JSON")
    _split_flags(p)
    p.add_argument("--model", default=None, help="model JSON from `train`")
    p.add_argument("--seed", type=int, default=None, help="must equal the model's seed")
    p.add_argument("--feedback", choices=("measured", "recursive"), default=None,
                   help="override the model's error feedback mode")
    p.add_argument("--predictions", default=None, help="two-column (measured, predicted) CSV")
    p.add_argument("--metrics-csv", default=None, help="metrics table CSV")
    p.add_argument("--timing", default=None, help="prediction timing JSON")

    p = sub.add_parser("ablate", help="stage on/off grid", formatter_class=fmt)
    _data_flags(p, "ablation CSV")
    _split_flags(p)
    _pipeline_flags(p)

    p = sub.add_parser("sensitivity", help="mean-substitution sensitivity", formatter_class=fmt)
    _data_flags(p, "sensitivity CSV")
    _split_flags(p)
    _pipeline_flags(p)
    return parser


# ------------------------------------------------------------------ helpers


def _apply_config(parser, argv):
    """Inject TOML values as defaults of the chosen subparser."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    if not known.config:
        return
    cfg = _load_toml(known.config)
    command = next((a for a in rest if not a.startswith("-")), None)
    subs = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    if command not in subs.choices:
        return
    sp = subs.choices[command]
    dests = {a.dest for a in sp._actions}
    dest_of = lambda key: "input" if key == "in" else key.replace("-", "_")
    # top-level keys are shared, so each command takes only those it knows;
    # a [command] table must name real flags
    defaults = {dest_of(k): v for k, v in cfg.items()
                if not isinstance(v, dict) and dest_of(k) in dests}
    for key, val in cfg.get(command, {}).items():
        if dest_of(key) not in dests:
            sp.error(f"config key {key!r} is not a flag of {command!r}")
        defaults[dest_of(key)] = val
    sp.set_defaults(**defaults)


def _need(args, *names):
    for name in names:
        if getattr(args, name) is None:
            flag = "--in" if name == "input" else "--" + name.replace("_", "-")
            raise UsageError(f"{args.command}: {flag} is required")


def _read(args):
    _need(args, "input")
    table = ds.load_table(args.input)
    if args.target not in table.labels:
        raise DataError(f"target column {args.target!r} not in {args.input}")
    if args.target != table.target:
        schema = ds.schema_from_labels(table.labels, args.target)
        table = ds.TimeSeriesTable(schema, table.values, table.sample_period)
    return table


def _n_train(args, table):
    if args.n_train is not None:
        return args.n_train
    return int(round(table.n_rows * args.train_fraction))


def _pipeline_config(args) -> PipelineConfig:
    return PipelineConfig(
        seed=args.seed, delay=args.delay, select=args.select, vmd=args.vmd, ec=args.ec,
        k_max={SCR_INTERNAL: args.k_max_internal, UNIT_LEVEL: args.k_max_unit},
        mic_exponent=args.b_exponent,
        trees=TreeParams(n_trees=args.n_trees, gbt_rounds=args.gbt_rounds),
        threshold=args.threshold, forced=tuple(s for s in args.forced.split(",") if s),
        vmd_config=VmdConfig(args.alpha, args.tau, args.tol, args.max_iter),
        corr_threshold=args.corr_threshold, k_cap=args.k_cap,
        hidden=args.hidden, ec_hidden=args.ec_hidden, ridge=args.ridge,
        activation=args.activation, ec_feedback=args.feedback,
    )


def _fmt(m):
    mape = "undefined" if m["MAPE"] is None else f"{m['MAPE']:.4f}%"
    return f"MSE={m['MSE']:.6g} MAE={m['MAE']:.6g} MAPE={mape}"


# --------------------------------------------------------------- subcommands


def cmd_synth(args):
    cfg = ds.load_synth_config(args.synth_config) if args.synth_config else ds.SynthConfig()
    cfg = replace(cfg, n=args.n, seed=args.seed, noise_sigma=args.noise_sigma,
                  noise_ar=args.noise_ar)
    table, truth = ds.generate_synthetic(cfg)
    ds.save_table(table, args.out)
    if args.truth:
        with open(args.truth, "w") as fh:
            json.dump({"delays": truth.delays, "relevant_features": list(truth.relevant_features),
                       "tones": [list(t) for t in truth.tones], "snr_db": truth.snr_db},
                      fh, indent=2)
    print(f"synth: wrote {table.n_rows} rows x {len(table.labels)} columns to {args.out}")


def cmd_clean(args):
    _need(args, "out")
    table = _read(args)
    cleaned = ds.clean_outliers(table, args.sigma_k, args.lookback)
    n_changed = int(np.sum(cleaned.values != table.values))
    ds.save_table(cleaned, args.out)
    print(f"clean: replaced {n_changed} values, wrote {args.out}")


def cmd_delays(args):
    _need(args, "out")
    table = _read(args)
    if not args.all_rows:
        table = ds.split(table, _n_train(args, table))[0]
    caps = {SCR_INTERNAL: args.k_max_internal, UNIT_LEVEL: args.k_max_unit}
    dm = estimate_delays(table, args.target, caps, args.b_exponent)
    dm.save(args.out)
    lags = ", ".join(f"{k}={e.lag_seconds:g}s" for k, e in dm.entries.items())
    print(f"delays: {len(dm.entries)} variables ({lags}) -> {args.out}")


def cmd_select(args):
    _need(args, "out")
    table = _read(args)
    train = ds.split(table, _n_train(args, table))[0]
    tn = ds.apply_normalization(train, ds.fit_normalization(train))
    if args.delays:
        tn = reconstruct(tn, DelayMap.load(args.delays), args.target)
    inputs = [lab for lab in tn.labels if lab != args.target]
    X = np.column_stack([tn.column(lab) for lab in inputs])
    report = feature_importances(X, tn.column(args.target), inputs,
                                 TreeParams(n_trees=args.n_trees, gbt_rounds=args.gbt_rounds),
                                 args.seed)
    report.save(args.out)
    if args.csv:
        report.save_csv(args.csv)
    chosen = select_features(report, args.threshold,
                             tuple(s for s in args.forced.split(",") if s))
    print(f"select: {len(chosen)} features [{', '.join(chosen)}] -> {args.out}")


def cmd_decompose(args):
    _need(args, "out")
    table = _read(args)
    train = ds.split(table, _n_train(args, table))[0]
    signal = train.column(args.column)
    cfg = VmdConfig(args.alpha, args.tau, args.tol, args.max_iter)
    if args.K is None:
        ms = select_mode_count(signal, cfg, args.corr_threshold, 2, args.k_cap).mode_set
    else:
        ms = decompose(signal, args.K, cfg)
    K = ms.K
    if args.prune:
        ms = prune_last_mode(ms)
    ms.save_csv(args.out)
    if args.omegas:
        ms.save_omegas(args.omegas)
    print(f"decompose: K={K}, kept {ms.K} modes of {args.column} -> {args.out}")


def _fit_model(args, train):
    _need(args, "seed")
    cfg = _pipeline_config(args)
    if args.tune_hidden:
        best, _ = tune_hidden(train, cfg)
        cfg = replace(cfg, hidden=best)
    return fit(train, cfg)


def cmd_train(args):
    _need(args, "out")
    table = _read(args)
    train = ds.split(table, _n_train(args, table))[0]
    model = _fit_model(args, train)
    model.save(args.out)
    print(f"train: {len(model.input_labels)} inputs [{', '.join(model.input_labels)}], "
          f"K={model.n_modes}, ec={'on' if model.ec is not None else 'off'} -> {args.out}")


def cmd_evaluate(args):
    _need(args, "model", "seed")
    model = PipelineModel.load(args.model)
    if args.seed != model.config.seed:
        raise DataError(f"--seed {args.seed} does not match the model's seed {model.config.seed}")
    table = _read(args)
    train, test = ds.split(table, _n_train(args, table))
    report = predict(model, test, history=train, feedback=args.feedback)
    if args.out:
        report.save_json(args.out, timing=False)
    if args.metrics_csv:
        report.save_metrics_csv(args.metrics_csv)
    if args.predictions:
        report.save_series_csv(args.predictions)
    if args.timing:
        with open(args.timing, "w") as fh:
            json.dump(report.timing, fh, indent=2)
    name = "hybrid" if "hybrid" in report.metrics else "initial"
    print(f"evaluate ({name}, {test.n_rows} rows): {_fmt(report.metrics[name])}")


def cmd_ablate(args):
    _need(args, "out", "seed")
    table = _read(args)
    train, test = ds.split(table, _n_train(args, table))
    rows = ablate(train, test, _pipeline_config(args))
    save_rows_csv(rows, args.out)
    full = next(r for r in rows if r["delay"] and r["select"] and r["vmd"] and r["ec"])
    bare = next(r for r in rows if not (r["delay"] or r["select"] or r["vmd"] or r["ec"]))
    print(f"ablate: {len(rows)} cells; full {_fmt(full)}; bare {_fmt(bare)} -> {args.out}")


def cmd_sensitivity(args):
    _need(args, "out", "seed")
    table = _read(args)
    train, test = ds.split(table, _n_train(args, table))
    rows = sensitivity(train, test, replace(_pipeline_config(args), ec=False))
    save_rows_csv(rows, args.out)
    top = max(rows[1:], key=lambda r: r["growth_pct"])
    print(f"sensitivity: baseline MAPE {rows[0]['MAPE']:.4f}%, largest growth "
          f"{top['feature']} {top['growth_pct']:+.1f}% -> {args.out}")


COMMANDS = {
    "synth": cmd_synth, "clean": cmd_clean, "delays": cmd_delays, "select": cmd_select,
    "decompose": cmd_decompose, "train": cmd_train, "evaluate": cmd_evaluate,
    "ablate": cmd_ablate, "sensitivity": cmd_sensitivity,
}


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (OSError, ValueError) as exc:
        print(f"scr-dynpredict: config error: {exc}", file=sys.stderr)
        return 1
    try:
        with warnings.catch_warnings():
            if not os.environ.get("SCR_DYNPREDICT_VERBOSE"):
                warnings.simplefilter("ignore")
            COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"scr-dynpredict: error: {exc}", file=sys.stderr)
        return 1
    except (PipelineError, DataError, SchemaError, ValueError, KeyError, OSError) as exc:
        print(f"scr-dynpredict {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
