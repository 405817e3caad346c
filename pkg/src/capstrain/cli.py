"""Command-line front end for single experiments and policy sweeps.

Exit codes: 0 success, 2 bad flags or config, 3 missing data files,
4 training diverged.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .data import load_split, subset
from .experiments import (
    default_sweep,
    emit_schedule_plot,
    experiment_points,
    pareto_front,
    run_policy_experiment,
    summary_table,
    write_points_csv,
)
from .schedules import PRESET_NAMES
from .training import write_metrics_csv

EXIT_OK = 0
EXIT_BAD_FLAGS = 2
EXIT_MISSING_DATA = 3
EXIT_DIVERGED = 4

DEFAULTS = {
    "dataset": "mnist",
    "data_dir": None,
    "policy": "fixed",
    "weight_sharing": False,
    "reduced_decoder": False,
    "mask_by_max_always": False,
    "epochs": 30,
    "runs": 5,
    "seed": 0,
    "scale": "paper",
    "subset": None,
    "sweep": None,
    "out": None,
    "plot": None,
    "checkpoint": None,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="capstrain",
        description="Train capsule networks under different learning-rate/batch policies "
        "and report accuracy / training-time / parameter trade-offs.",
    )
    parser.add_argument("--dataset", choices=["mnist", "fashion-mnist"], default=None)
    parser.add_argument("--data-dir", default=None, help="directory with the four IDX files")
    parser.add_argument("--policy", choices=list(PRESET_NAMES), default=None)
    parser.add_argument("--weight-sharing", action="store_true", default=None)
    parser.add_argument("--reduced-decoder", action="store_true", default=None)
    parser.add_argument("--mask-by-max-always", action="store_true", default=None)
    parser.add_argument("--epochs", type=int, default=None)
    parser.add_argument("--runs", type=int, default=None, help="runs to average (seeds seed..seed+runs-1)")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--scale", choices=["paper", "desk"], default=None)
    parser.add_argument("--subset", type=int, default=None, help="stratified training subset size")
    parser.add_argument("--sweep", choices=["default"], default=None)
    parser.add_argument("--out", default=None, help="metrics CSV path")
    parser.add_argument("--plot", default=None, help="schedule trace path (.svg renders, else CSV)")
    parser.add_argument("--checkpoint", default=None, help="checkpoint path (first run, best epoch)")
    parser.add_argument("--config", default=None, help="key=value file; flags override it")
    return parser


_BOOL_KEYS = {"weight_sharing", "reduced_decoder", "mask_by_max_always"}
_INT_KEYS = {"epochs", "runs", "seed", "subset"}


def parse_config_file(path) -> dict:
    """Flat key=value text mirroring the flag names ('-' or '_' both work)."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in DEFAULTS:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        if key in _BOOL_KEYS:
            if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(f"{path}:{lineno}: {key} wants a boolean, got {value!r}")
            values[key] = value.lower() in ("true", "1", "yes")
        elif key in _INT_KEYS:
            values[key] = int(value)
        else:
            values[key] = value
    return values


def _merge_options(args) -> dict:
    options = dict(DEFAULTS)
    if args.config is not None:
        options.update(parse_config_file(args.config))
    for key in DEFAULTS:
        cli_value = getattr(args, key)
        if cli_value is not None:
            options[key] = cli_value
    return options


def _resolve_data_dir(options):
    if options["data_dir"] is not None:
        path = Path(options["data_dir"])
        return path if path.is_dir() else None
    default = Path("data")
    return default if default.is_dir() else None


def _validate(options):
    if options["epochs"] < 1:
        raise ValueError("--epochs must be >= 1")
    if options["runs"] < 1:
        raise ValueError("--runs must be >= 1")
    if options["subset"] is not None and options["subset"] < 10:
        raise ValueError("--subset must be >= 10 (one sample per class)")
    if options["policy"] == "fixed" and options["sweep"] is None and options["plot"] is None:
        pass  # plain baseline run is fine


def run_cli(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        options = _merge_options(args)
        _validate(options)
    except SystemExit as exc:  # argparse already printed the message
        return EXIT_OK if exc.code in (0, None) else EXIT_BAD_FLAGS
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_FLAGS

    plotted = False
    if options["plot"] is not None:
        n_for_plot = options["subset"] if options["subset"] is not None else 60_000
        emit_schedule_plot(options["policy"], options["epochs"], n_for_plot, options["plot"])
        print(f"schedule trace written to {options['plot']}")
        plotted = True

    data_dir = _resolve_data_dir(options)
    if data_dir is None:
        if plotted:
            return EXIT_OK
        where = options["data_dir"] or "./data"
        print(
            f"error: dataset directory {where!r} not found; pass --data-dir with "
            "train-images-idx3-ubyte etc. (see README for a fetch helper)",
            file=sys.stderr,
        )
        return EXIT_MISSING_DATA

    try:
        train_split = load_split(data_dir, options["dataset"], "train")
        test_split = load_split(data_dir, options["dataset"], "test")
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_DATA

    if options["subset"] is not None:
        train_split = subset(train_split, options["subset"], seed=options["seed"])
        test_n = min(len(test_split), max(10, options["subset"] // 5))
        test_split = subset(test_split, test_n, seed=options["seed"] + 1)
    print(f"dataset {options['dataset']}: {len(train_split)} train / {len(test_split)} test samples")

    combos = (
        default_sweep().combos
        if options["sweep"] is not None
        else [
            (
                options["policy"]
                + ("+ws" if options["weight_sharing"] else "")
                + ("+rd" if options["reduced_decoder"] else ""),
                options["policy"],
                options["weight_sharing"],
                options["reduced_decoder"],
            )
        ]
    )

    averaged, all_runs = [], []
    for label, policy, ws, rd in combos:
        print(f"running {label}: {options['runs']} run(s) x {options['epochs']} epoch(s) [{options['scale']} scale]")
        avg, runs = run_policy_experiment(
            policy,
            train_split,
            test_split,
            scale=options["scale"],
            weight_sharing=ws,
            reduced_decoder=rd,
            epochs=options["epochs"],
            runs=options["runs"],
            seed=options["seed"],
            label=label,
            mask_by_max_always=options["mask_by_max_always"],
            checkpoint_path=options["checkpoint"] if len(combos) == 1 else None,
        )
        all_runs.extend(runs)
        if avg is None:
            diverged = runs[-1]
            print(
                f"error: run {diverged.run_id} diverged at epoch {diverged.diverged_at[0]}, "
                f"step {diverged.diverged_at[1]}",
                file=sys.stderr,
            )
            if options["out"] is not None:
                write_metrics_csv(options["out"], all_runs)
            return EXIT_DIVERGED
        averaged.append(avg)

    print()
    print(summary_table(averaged))
    if len(averaged) > 1:
        front = pareto_front(experiment_points(averaged))
        print()
        print("pareto front (accuracy desc):")
        for p in front:
            print(f"  {p.label:<18} acc={p.accuracy:.4f} time={p.training_time:.1f}s params={p.parameters}")
    if options["out"] is not None:
        write_metrics_csv(options["out"], all_runs)
        points_path = str(options["out"]).rsplit(".", 1)[0] + "-points.csv"
        write_points_csv(points_path, experiment_points(averaged))
        print(f"\nmetrics written to {options['out']}, trade-off points to {points_path}")
    return EXIT_OK


def main():
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
