#!/usr/bin/env python3
"""Desk-scale training run with per-epoch evaluation and metric export.

Uses the real dataset when the IDX files are in ./data (or
$CAPSTRAIN_DATA_DIR); otherwise falls back to the deterministic synthetic
ten-class set so the demo always runs.  Compares the fixed-rate baseline
against the combined warm-restart + adaptive-batch schedule.

Usage: python demos/03_desk_training.py [epochs] [train-size]
"""

import os
import sys
import time
from pathlib import Path

from capstrain.data import load_split, subset, synthetic_split
from capstrain.experiments import run_policy_experiment, summary_table
from capstrain.training import write_metrics_csv

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 2
train_size = int(sys.argv[2]) if len(sys.argv) > 2 else 400

data_dir = os.environ.get("CAPSTRAIN_DATA_DIR", "data")
if Path(data_dir).is_dir():
    print(f"using real dataset from {data_dir}")
    train_split = subset(load_split(data_dir, "mnist", "train"), train_size, seed=0)
    test_split = subset(load_split(data_dir, "mnist", "test"), max(50, train_size // 5), seed=1)
else:
    print("real dataset not found; using the synthetic ten-class set")
    train_split = synthetic_split(train_size, seed=0)
    test_split = synthetic_split(max(50, train_size // 5), seed=1, name="synthetic-test")

print(f"{len(train_split)} train / {len(test_split)} test samples, {epochs} epoch(s), desk scale\n")

results = []
all_runs = []
for policy in ("fixed", "wab"):
    started = time.perf_counter()
    avg, runs = run_policy_experiment(
        policy, train_split, test_split, scale="desk", epochs=epochs, runs=1, seed=0
    )
    all_runs.extend(runs)
    accs = " -> ".join(f"{a:.3f}" for a in avg.accuracies())
    print(f"{policy:<6} accuracy per epoch: {accs}   ({time.perf_counter() - started:.0f}s)")
    results.append(avg)

print()
print(summary_table(results))

out = Path("demo-output")
out.mkdir(exist_ok=True)
write_metrics_csv(out / "desk-metrics.csv", all_runs)
print(f"\nmetrics written to {out / 'desk-metrics.csv'}")
