"""
Command line entry point::

    newsfuse train    --model nrms --fusion late --objective ce
    newsfuse evaluate --model nrms --fusion late --objective ce
    newsfuse sweep    --model naml --objective scl --seed 13
    newsfuse report   --out runs

Flags override the values of ``--config``.  Every subcommand reads and
writes under ``--out``.
"""
import argparse
import glob
import logging
import os
import sys
from typing import Any, Dict, List, Optional

import pandas as pd

from newsfuse.config import (ExperimentConfig, Variant, dump_config,
                             load_config)
from newsfuse.fusion import FusionMode
from newsfuse.metrics import average_deltas, combine_reports
from newsfuse.mind import write_manifest
from newsfuse.objectives import Objective
from newsfuse.runner import (Checkpoint, prepare_dataset, run_evaluation,
                             run_name, sweep_scl_temperature, train_seeds)

logger = logging.getLogger("newsfuse.cli")

REPORT_SUFFIX = "-report.tsv"


def _seed_list(value: str) -> List[int]:
    try:
        return [int(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(
            "expected comma-separated integers, got {!r}".format(value))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="newsfuse",
        description="Train and evaluate neural news recommenders on MIND")
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="-v for progress, -vv for debug output")
    commands = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment config")
    common.add_argument("--model", choices=[v.value for v in Variant])
    common.add_argument("--fusion", choices=[f.value for f in FusionMode])
    common.add_argument("--objective", choices=[o.value for o in Objective])
    common.add_argument("--tau", type=float, help="SCL temperature")
    common.add_argument("--seed", type=int, help="run a single seed")
    common.add_argument("--seeds", type=_seed_list,
                        help="comma-separated seed list")
    common.add_argument("--epochs", type=int)
    common.add_argument("--batch-size", type=int)
    common.add_argument("--data-dir",
                        help="directory holding train/ and dev/")
    common.add_argument("--subsample", type=float,
                        help="fraction of users to keep, by user hash")
    common.add_argument("--workers", type=int,
                        help="processes for independent runs")
    common.add_argument("--out", help="output directory")

    commands.add_parser("train", parents=[common],
                        help="train one model per seed")
    commands.add_parser("evaluate", parents=[common],
                        help="score trained checkpoints on the test split")
    commands.add_parser("sweep", parents=[common],
                        help="select the SCL temperature on validation")
    commands.add_parser("report", parents=[common],
                        help="merge every metric report under --out")
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    changes = {}  # type: Dict[str, Any]
    if args.fusion:
        changes["fusion"] = FusionMode(args.fusion)
    if args.objective:
        changes["objective"] = Objective(args.objective)
    if args.tau is not None:
        changes["temperature"] = args.tau
    if args.seeds:
        changes["seeds"] = tuple(args.seeds)
    if args.seed is not None:
        changes["seeds"] = (args.seed,)
    for flag, field in (("epochs", "epochs"), ("batch_size", "batch_size"),
                        ("data_dir", "data_dir"), ("subsample", "subsample"),
                        ("workers", "workers"), ("out", "out_dir")):
        value = getattr(args, flag)
        if value is not None:
            changes[field] = value
    if args.model:
        changes["model_changes"] = {"variant": Variant(args.model)}
    config = config.replace(**changes)
    config.validate()
    return config


def cmd_train(config: ExperimentConfig) -> int:
    dataset = prepare_dataset(config)
    os.makedirs(config.out_dir, exist_ok=True)
    write_manifest(dataset, os.path.join(config.out_dir, "manifest.txt"))
    dump_config(config, os.path.join(config.out_dir,
                                     config.run_name + ".yaml"))
    results = train_seeds(config, dataset, config.out_dir)
    for seed, result in zip(config.seeds, results):
        print("{}: best validation AUC {:.4f} at epoch {}".format(
            run_name(config, seed), result.validation_auc,
            result.best.epoch))
    return 0


def cmd_evaluate(config: ExperimentConfig) -> int:
    paths = [os.path.join(config.out_dir, run_name(config, seed) +
                          "-best.npz") for seed in config.seeds]
    missing = [p for p in paths if not os.path.exists(p)]
    if missing:
        logger.error("Missing checkpoints: {}".format(", ".join(missing)))
        return 1
    checkpoints = [Checkpoint.load(p) for p in paths]
    report = run_evaluation(checkpoints, config, prepare_dataset(config))
    report.write(os.path.join(config.out_dir,
                              config.run_name + REPORT_SUFFIX))
    print(report.summary())
    return 0


def cmd_sweep(config: ExperimentConfig) -> int:
    result = sweep_scl_temperature(config, prepare_dataset(config))
    os.makedirs(config.out_dir, exist_ok=True)
    result.table.to_csv(
        os.path.join(config.out_dir, config.run_name + "-sweep.tsv"),
        sep="\t", index=False)
    print(result.table.to_string(index=False))
    print("best temperature: {:.2f}".format(result.best_temperature))
    return 0


def cmd_report(config: ExperimentConfig) -> int:
    paths = sorted(glob.glob(os.path.join(config.out_dir,
                                          "*" + REPORT_SUFFIX)))
    if not paths:
        logger.error("No reports under {}".format(config.out_dir))
        return 1
    frames = [pd.read_csv(p, sep="\t") for p in paths]
    table = combine_reports(frames)
    table.to_csv(os.path.join(config.out_dir, "table.tsv"), sep="\t")
    print(table.to_string())
    deltas = average_deltas(frames)
    if not deltas.empty:
        print()
        print("average change")
        print(deltas.to_string(float_format="{:+.4f}".format))
    return 0


COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose,
                                                      logging.DEBUG)
    logging.basicConfig(
        level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        config = resolve_config(args)
        return COMMANDS[args.command](config)
    except (ValueError, ArithmeticError, RuntimeError, OSError) as error:
        logger.error("{}: {}".format(type(error).__name__, error))
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
