"""Command-line entry point: ``cnnbench <verb> --config PATH``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import bench
from .config import load_config, parse_member
from .errors import BenchError, ConfigError, DataError, RunFailed, UnknownArchitecture

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_TRAINING, EXIT_PARTIAL = 0, 2, 3, 4, 5

log = logging.getLogger("cnnbench")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="experiment config (JSON)")
    common.add_argument("--resume", action="store_true", help="skip runs whose artifacts are complete")
    common.add_argument("--runs", help="comma-separated ARCH:MODE list to restrict to")
    common.add_argument("--seed", type=int, help="override every seed in the config")
    common.add_argument("--augment-eval", action="store_true", default=None,
                        help="augment validation and test splits as well")
    common.add_argument("--reject-log", help="CSV file listing images rejected by validation")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="cnnbench", description="CNN / transfer / ensemble benchmark harness")
    sub = p.add_subparsers(dest="verb", required=True)
    sub.add_parser("prepare", parents=[common], help="scan, validate, split and augment the dataset")
    sub.add_parser("train", parents=[common], help="train one or all runs")
    sub.add_parser("predict", parents=[common], help="write prediction matrices for trained runs")
    sub.add_parser("ensemble", parents=[common], help="combine member predictions")
    rep = sub.add_parser("report", parents=[common], help="comparison table, curves, confusion plots")
    rep.add_argument("--formats", default="text,json,plots")
    run = sub.add_parser("run", parents=[common], help="everything, end to end")
    run.add_argument("--formats", default="text,json,plots")
    return p


def _selected(config, runs_arg):
    if not runs_arg:
        return list(config.runs)
    try:
        wanted = [parse_member(r.strip()) for r in runs_arg.split(",") if r.strip()]
    except UnknownArchitecture as exc:
        raise ConfigError(str(exc)) from exc
    declared = {r.model_id: r for r in config.runs}
    unknown = [w for w in wanted if w not in declared]
    if unknown:
        raise ConfigError(f"--runs names undeclared runs: {unknown}")
    return [declared[w] for w in wanted]


def _formats(arg):
    return [f for f in (arg or "").split(",") if f]


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config).with_overrides(
            seed=args.seed, augment_eval=args.augment_eval, reject_log=args.reject_log)
        runs = _selected(config, args.runs)

        if args.verb == "prepare":
            manifest = bench.prepare(config)
            for name, row in manifest.counts.items():
                print(f"{name}: " + " ".join(f"{k}={v}" for k, v in row.items() if v))
            return EXIT_OK

        if args.verb == "train":
            manifest = bench.load_prepared(config)
            for run in runs:
                if args.resume and bench.run_is_complete(config, run):
                    continue
                try:
                    bench.train_run(config, run, manifest)
                except Exception as exc:
                    raise RunFailed(run.model_id, exc) from exc
            return EXIT_OK

        if args.verb == "predict":
            manifest = bench.load_prepared(config)
            for run in runs:
                try:
                    bench.predict_run(config, run, manifest)
                except Exception as exc:
                    raise RunFailed(run.model_id, exc) from exc
            return EXIT_OK

        if args.verb == "ensemble":
            for spec in config.ensembles:
                bench.run_ensemble(config, spec)
            return EXIT_OK

        if args.verb == "report":
            bundle = bench.collect_bundle(config)
            for f in bench.emit_report(bundle, _formats(args.formats)):
                print(f)
            return EXIT_PARTIAL if bundle.partial else EXIT_OK

        bundle = bench.run_experiment(config, resume=args.resume, only=args.runs.split(",") if args.runs else None)
        for f in bench.emit_report(bundle, _formats(args.formats)):
            print(f)
        return EXIT_PARTIAL if bundle.partial else EXIT_OK

    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except RunFailed as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        if isinstance(exc.cause, DataError):
            return EXIT_DATA
        if exc.bundle is not None and exc.bundle.runs:
            return EXIT_PARTIAL
        return EXIT_TRAINING
    except BenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRAINING


if __name__ == "__main__":
    sys.exit(main())
