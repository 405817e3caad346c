#!/usr/bin/env python3
"""Pareto analysis over (accuracy, training time, parameter count).

First reproduces the dominance structure of the published full-scale
comparison from its reported numbers, then runs a quick desk-scale
mini-sweep on synthetic data and extracts the front from measured results.

Usage: python demos/04_pareto_tradeoffs.py
"""

from pathlib import Path

from capstrain.data import synthetic_split
from capstrain.experiments import (
    ExperimentPoint,
    experiment_points,
    pareto_front,
    run_policy_experiment,
    write_points_csv,
)

print("=== full-scale reported numbers ===")
reported = [
    ExperimentPoint("fixed", 0.9937, 29 * 49.0, 8_215_728),
    ExperimentPoint("wab", 0.9945, 3 * 49.0, 8_215_728),
    ExperimentPoint("fixed+ws", 0.9926, 26 * 49.0, 6_782_128),
    ExperimentPoint("wab+ws", 0.9938, 18 * 49.0, 6_782_128),
]
for p in reported:
    print(f"  {p.label:<10} acc={p.accuracy:.4f}  time={p.training_time:7.0f}s  params={p.parameters:,}")
front = pareto_front(reported)
print("  front:", ", ".join(p.label for p in front))
print("  (the shared-weight fixed run is dominated: slower and less accurate at equal size)")

print("\n=== measured desk-scale mini-sweep (synthetic data) ===")
train_split = synthetic_split(300, seed=0)
test_split = synthetic_split(80, seed=1, name="synthetic-test")
measured = []
for policy, ws in [("fixed", False), ("wab", False), ("fixed", True)]:
    label = policy + ("+ws" if ws else "")
    avg, _ = run_policy_experiment(
        policy, train_split, test_split, scale="desk",
        weight_sharing=ws, reduced_decoder=ws, epochs=1, runs=1, seed=0, label=label,
    )
    measured.append(avg)
    print(f"  {label:<10} max acc {avg.max_accuracy:.3f} at epoch {avg.epoch_of_max}, "
          f"{avg.parameter_count:,} params")

points = experiment_points(measured)
front = pareto_front(points)
print("  measured front:", ", ".join(p.label for p in front))

out = Path("demo-output")
out.mkdir(exist_ok=True)
write_points_csv(out / "pareto-points.csv", points)
print(f"\npoints written to {out / 'pareto-points.csv'}")
