#!/usr/bin/env python3
"""Walk through every learning-rate / batch-size policy.

Evaluates each policy's closed form at its anchor points, then writes the
full per-step traces (CSV + SVG rendering) for a 30-epoch run over a
60k-sample set so the curves can be compared visually.

Usage: python demos/01_schedule_gallery.py [output-dir]
"""

import sys
from pathlib import Path

from capstrain.experiments import emit_schedule_plot
from capstrain.schedules import (
    ScheduleState,
    batch_adabatch,
    lr_exp_decay,
    lr_one_cycle,
    lr_warm_restarts,
    wab_cycle_steps,
)

out_dir = Path(sys.argv[1] if len(sys.argv) > 1 else "demo-output")
out_dir.mkdir(parents=True, exist_ok=True)

print("=== anchor values ===")
print(f"fixed:                       lr = 0.001 at every step")
print(f"exponential decay, step 2000: lr = {lr_exp_decay(1e-3, 0.96, 2000, 2000):.6f}")

ts_total = 112_500  # 30 epochs x ceil(60000 / 16)
for ts, tag in [(0, "start"), (0.45 * ts_total, "peak"), (0.9 * ts_total, "anneal start"), (ts_total, "end")]:
    print(f"one-cycle {tag:>12}: lr = {lr_one_cycle(1e-4, 1e-3, ts_total, ts):.6f}")

state = ScheduleState()
lr0, _ = lr_warm_restarts(1e-4, 1e-3, state, 3750)
lr_mid, _ = lr_warm_restarts(1e-4, 1e-3, ScheduleState(t_curr=1875), 3750)
print(f"warm restarts: cycle opens at {lr0:.4f}, midpoint {lr_mid:.5f}")

print("\nadaptive batch plan (P=4):", [batch_adabatch(4, e) for e in range(1, 31)])
print(
    "combined schedule cycles at N=60000, B=16:",
    wab_cycle_steps(1, 60_000),
    "steps (warmup), then",
    wab_cycle_steps(4, 60_000),
)

print("\n=== full traces (30 epochs, N=60000) ===")
for policy in ("fixed", "expdecay", "ocp", "warmrestarts", "adabatch", "wab"):
    csv_path = out_dir / f"schedule-{policy}.csv"
    svg_path = out_dir / f"schedule-{policy}.svg"
    emit_schedule_plot(policy, epochs=30, train_set_size=60_000, path=csv_path)
    emit_schedule_plot(policy, epochs=30, train_set_size=60_000, path=svg_path)
    print(f"  {policy:<14} -> {csv_path.name}, {svg_path.name}")

print(f"\ntraces in {out_dir}/")
