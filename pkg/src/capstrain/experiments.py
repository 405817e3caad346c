"""Experiment-level analysis: Pareto fronts over (accuracy, training time,
parameter count), summary tables shaped like the published comparison, and
schedule trace export for plotting.

Training time for trade-off purposes is epochs-to-best-accuracy multiplied
by the measured seconds per epoch; raw epoch counts are reported alongside
so comparisons stay hardware-independent.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .data import DatasetSplit
from .model import config_for_scale, count_parameters
from .schedules import policy_preset, schedule_trace
from .training import AveragedMetrics, RunConfig, average_runs, epochs_to_reach, train

__all__ = [
    "ExperimentPoint",
    "dominates",
    "pareto_front",
    "write_points_csv",
    "read_points_csv",
    "SweepSpec",
    "default_sweep",
    "run_policy_experiment",
    "summary_table",
    "experiment_points",
    "emit_schedule_plot",
]


@dataclass(frozen=True)
class ExperimentPoint:
    """One experiment outcome in trade-off space."""

    label: str
    accuracy: float  # fraction, maximize
    training_time: float  # seconds, minimize
    parameters: int  # count, minimize

    def __post_init__(self):
        for name in ("accuracy", "training_time", "parameters"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ValueError(f"{name} must be finite and positive, got {value}")


def dominates(q: ExperimentPoint, p: ExperimentPoint) -> bool:
    """True if q is at least as good on all three axes and better on one."""
    if q.accuracy < p.accuracy or q.training_time > p.training_time or q.parameters > p.parameters:
        return False
    return q.accuracy > p.accuracy or q.training_time < p.training_time or q.parameters < p.parameters


def pareto_front(points) -> list:
    """Non-dominated subset, ordered by descending accuracy.

    A candidate can only be dominated by a point of accuracy >= its own, so
    one pass in accuracy order comparing against the kept set suffices.
    """
    points = list(points)
    if not points:
        raise ValueError("pareto_front needs at least one point")
    ordered = sorted(points, key=lambda p: (-p.accuracy, p.training_time, p.parameters, p.label))
    kept = []
    for p in ordered:
        if not any(dominates(k, p) for k in kept):
            kept.append(p)
    return kept


def write_points_csv(path, points) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "accuracy", "training_time", "parameters"])
        for p in points:
            writer.writerow([p.label, repr(p.accuracy), repr(p.training_time), p.parameters])


def read_points_csv(path) -> list:
    points = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            points.append(
                ExperimentPoint(
                    label=row["label"],
                    accuracy=float(row["accuracy"]),
                    training_time=float(row["training_time"]),
                    parameters=int(row["parameters"]),
                )
            )
    return points


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


@dataclass
class SweepSpec:
    """Labelled (policy, weight_sharing, reduced_decoder) combinations."""

    combos: list = field(default_factory=list)  # (label, policy, ws, rd)

    def __post_init__(self):
        labels = [c[0] for c in self.combos]
        if len(set(labels)) != len(labels):
            raise ValueError("sweep labels must be unique")


def default_sweep() -> SweepSpec:
    """Every policy, with and without parameter reduction.

    The reduced arm enables weight sharing together with the small decoder,
    matching how the published comparison groups them.
    """
    combos = []
    for policy in ("fixed", "expdecay", "ocp", "warmrestarts", "adabatch", "wab"):
        combos.append((policy, policy, False, False))
        combos.append((f"{policy}+ws", policy, True, True))
    return SweepSpec(combos=combos)


def run_policy_experiment(
    policy: str,
    train_split: DatasetSplit,
    test_split: DatasetSplit,
    scale: str = "desk",
    weight_sharing: bool = False,
    reduced_decoder: bool = False,
    epochs: int = 30,
    runs: int = 5,
    seed: int = 0,
    base_batch: int = 16,
    label: str | None = None,
    mask_by_max_always: bool = False,
    checkpoint_path=None,
):
    """Train ``runs`` seeds of one configuration and average them.

    Returns (AveragedMetrics, [RunMetrics...]);
    a diverged run stops the experiment early and is returned alone.
    """
    lr_policy, batch_policy = policy_preset(policy, base_batch=base_batch)
    model_config = config_for_scale(scale, weight_sharing=weight_sharing, reduced_decoder=reduced_decoder)
    all_runs = []
    for r in range(runs):
        cfg = RunConfig(
            model_config=model_config,
            lr_policy=lr_policy,
            batch_policy=batch_policy,
            epochs=epochs,
            seed=seed + r,
            runs=runs,
            label=label or policy,
            mask_by_max_always=mask_by_max_always,
            checkpoint_path=checkpoint_path if r == 0 else None,
        )
        metrics = train(cfg, train_split, test_split)
        all_runs.append(metrics)
        if metrics.diverged:
            return None, all_runs
    return average_runs(all_runs), all_runs


# ---------------------------------------------------------------------------
# reporting
# ---------------------------------------------------------------------------


def _baseline(results):
    for r in results:
        if r.policy == "fixed" and not r.weight_sharing and not r.reduced_decoder:
            return r
    return results[0]


def summary_table(results) -> str:
    """Fixed-width comparison: accuracy, epochs to max, epochs to the
    baseline's best accuracy, parameter count.  The fixed-rate row is the
    baseline."""
    if not results:
        raise ValueError("no results to summarize")
    base = _baseline(results)
    base_best = base.max_accuracy
    header = f"{'policy':<18} {'max acc':>8} {'ep-max':>7} {'ep-base':>8} {'params':>10}"
    lines = [header, "-" * len(header)]
    for r in results:
        reach = epochs_to_reach(r, base_best)
        label = r.label + (" (baseline)" if r is base else "")
        lines.append(
            f"{label:<18} {r.max_accuracy:>8.4f} {r.epoch_of_max:>7d} "
            f"{'-' if reach is None else reach:>8} {r.parameter_count:>10d}"
        )
    return "\n".join(lines)


def experiment_points(results) -> list:
    """Trade-off coordinates from averaged metrics (measured wall clock)."""
    points = []
    for r in results:
        seconds = r.mean_epoch_seconds if isinstance(r, AveragedMetrics) else float(
            np.mean([rec.elapsed_s for rec in r.records])
        )
        points.append(
            ExperimentPoint(
                label=r.label,
                accuracy=r.max_accuracy,
                training_time=r.epoch_of_max * max(seconds, 1e-9),
                parameters=r.parameter_count,
            )
        )
    return points


def emit_schedule_plot(policy: str, epochs: int, train_set_size: int, path, base_batch: int = 16) -> None:
    """Write the full (epoch, step, lr, batch) trace for one policy.

    A ``.svg`` path gets a simple vector rendering of the two curves;
    anything else gets the CSV.
    """
    lr_policy, batch_policy = policy_preset(policy, base_batch=base_batch)
    trace = schedule_trace(lr_policy, batch_policy, epochs, train_set_size)
    path = str(path)
    if path.endswith(".svg"):
        _write_schedule_svg(trace, path, title=f"{policy}, {epochs} epochs, N={train_set_size}")
    else:
        trace.write_csv(path)


def _write_schedule_svg(trace, path, title="", width=960, height=320, margin=45):
    xs = np.asarray(trace.step, dtype=np.float64)
    panel_w = width - 2 * margin
    panel_h = height - 2 * margin

    def scale_x(x):
        span = max(xs[-1] - xs[0], 1.0)
        return margin + (x - xs[0]) / span * panel_w

    def polyline(ys, color):
        lo, hi = float(np.min(ys)), float(np.max(ys))
        span = hi - lo if hi > lo else 1.0
        pts = " ".join(
            f"{scale_x(x):.1f},{height - margin - (y - lo) / span * panel_h:.1f}"
            for x, y in zip(xs[:: max(1, len(xs) // 2000)], np.asarray(ys, dtype=np.float64)[:: max(1, len(xs) // 2000)])
        )
        return f'<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{pts}"/>'

    body = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{margin}" y="20" font-family="monospace" font-size="13">{title}</text>',
        f'<text x="{margin}" y="34" font-family="monospace" font-size="11" fill="#1f77b4">learning rate '
        f"[{trace.lr.min():.2e}, {trace.lr.max():.2e}]</text>",
        f'<text x="{margin + 300}" y="34" font-family="monospace" font-size="11" fill="#d62728">batch size '
        f"[{trace.batch.min()}, {trace.batch.max()}]</text>",
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" stroke="black"/>',
        polyline(trace.lr, "#1f77b4"),
        polyline(trace.batch, "#d62728"),
        "</svg>",
    ]
    with open(path, "w") as fh:
        fh.write("\n".join(body))
