"""Learning-rate and batch-size policies, evaluated as pure functions.

Implements every policy the training engine can run: fixed rate,
exponential decay with a continuous exponent, the three-phase one-cycle
ramp, cosine-annealed warm restarts, epoch-indexed adaptive batch sizing,
and the combined warm-restart + adaptive-batch schedule.  A full
deterministic (epoch, step, lr, batch) trace can be precomputed for any
configuration and exported as CSV.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "FIXED",
    "EXP_DECAY",
    "ONE_CYCLE",
    "WARM_RESTARTS",
    "WARM_ADABATCH",
    "CONSTANT",
    "ADABATCH",
    "LR_VARIANTS",
    "BATCH_VARIANTS",
    "LrPolicy",
    "BatchPolicy",
    "ScheduleState",
    "ScheduleTrace",
    "lr_fixed",
    "lr_exp_decay",
    "lr_one_cycle",
    "lr_warm_restarts",
    "batch_adabatch",
    "warm_adabatch",
    "wab_batch_size",
    "wab_cycle_steps",
    "schedule_trace",
    "policy_preset",
    "PRESET_NAMES",
]

FIXED = "fixed"
EXP_DECAY = "expdecay"
ONE_CYCLE = "ocp"
WARM_RESTARTS = "warmrestarts"
WARM_ADABATCH = "wab"
LR_VARIANTS = (FIXED, EXP_DECAY, ONE_CYCLE, WARM_RESTARTS, WARM_ADABATCH)

CONSTANT = "constant"
ADABATCH = "adabatch"
BATCH_VARIANTS = (CONSTANT, ADABATCH)


@dataclass(frozen=True)
class LrPolicy:
    """Declarative learning-rate schedule configuration.

    ``total_steps`` is required by the one-cycle variant (usually filled in
    from the batch plan); ``cycle_steps`` overrides the warm-restart cycle
    length, which otherwise defaults to one epoch's worth of steps.
    """

    variant: str = FIXED
    lr_min: float = 1e-4
    lr_max: float = 1e-3
    decay_rate: float = 0.96
    decay_steps: int = 2000
    total_steps: int | None = None
    cycle_steps: int | None = None

    def __post_init__(self):
        if self.variant not in LR_VARIANTS:
            raise ValueError(f"unknown lr policy {self.variant!r}; choose from {LR_VARIANTS}")
        if not (0.0 < self.lr_min <= self.lr_max):
            raise ValueError(f"need 0 < lr_min <= lr_max, got {self.lr_min}, {self.lr_max}")
        if self.total_steps is not None and self.total_steps <= 0:
            raise ValueError("total_steps must be positive")
        if self.cycle_steps is not None and self.cycle_steps <= 0:
            raise ValueError("cycle_steps must be positive")


@dataclass(frozen=True)
class BatchPolicy:
    """Declarative batch-size schedule: constant, or stepped up per epoch."""

    variant: str = CONSTANT
    base_batch: int = 16
    growth_exponent: int = 4  # adaptive sizing jumps to 2**P after the warmup epochs

    def __post_init__(self):
        if self.variant not in BATCH_VARIANTS:
            raise ValueError(f"unknown batch policy {self.variant!r}; choose from {BATCH_VARIANTS}")
        if self.base_batch < 1:
            raise ValueError("base_batch must be >= 1")
        if self.growth_exponent < 0:
            raise ValueError("growth_exponent must be >= 0")


@dataclass(frozen=True)
class ScheduleState:
    """Mutable-by-replacement cursor for stateful schedules."""

    t_curr: int = 0
    epoch: int = 1
    global_step: int = 0


def lr_fixed(policy: LrPolicy) -> float:
    """Constant rate: the configured upper bound."""
    return policy.lr_max


def lr_exp_decay(lr_0: float, decay_rate: float, decay_steps: int, step) -> float:
    """lr_0 * decay_rate ** (step / decay_steps), continuous in ``step``."""
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    return lr_0 * decay_rate ** (step / decay_steps)


def lr_one_cycle(lr_min: float, lr_max: float, total_steps, ts) -> float:
    """Three-phase one-cycle rate at training step ``ts``.

    Linear rise to lr_max over the first 45% of steps, symmetric linear
    fall back to lr_min over the next 45%, then a final anneal with slope
    -9 * lr_min / total_steps that lands on 0.1 * lr_min at the last step.
    """
    if not (0 <= ts <= total_steps):
        raise ValueError(f"ts={ts} outside [0, {total_steps}]")
    t_peak = 0.45 * total_steps
    if ts <= t_peak:
        return lr_min + ts * (lr_max - lr_min) / t_peak
    if ts <= 2 * t_peak:
        return lr_min + (ts - 0.9 * total_steps) * (lr_min - lr_max) / t_peak
    return lr_min - 9.0 * lr_min / total_steps * (ts - 0.9 * total_steps)


def lr_warm_restarts(lr_min: float, lr_max: float, state: ScheduleState, cycle_steps: int):
    """Cosine-annealed rate with a hard restart every ``cycle_steps`` steps.

    Returns ``(lr, next_state)``: the rate for the current step and the
    advanced cursor (t_curr wraps to 0 once it reaches the cycle length).
    """
    t = state.t_curr
    if not (0 <= t <= cycle_steps):
        raise ValueError(f"t_curr={t} outside [0, {cycle_steps}]")
    lr = lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * t / cycle_steps))
    t_next = 0 if t == cycle_steps else t + 1
    return lr, replace(state, t_curr=t_next, global_step=state.global_step + 1)


def batch_adabatch(growth_exponent: int, epoch: int) -> int:
    """Epoch-indexed batch size: 1 for a 3-epoch warmup, then three
    power-of-two jumps five epochs apart."""
    if epoch < 1:
        raise ValueError(f"epoch is 1-based, got {epoch}")
    p = growth_exponent
    if epoch <= 3:
        return 1
    if epoch <= 8:
        return 2**p
    if epoch <= 13:
        return 2 ** (p + 1)
    return 2 ** (p + 2)


def wab_batch_size(epoch: int, wab_batch: int = 16) -> int:
    """Combined schedule's batch plan: 1 during the 3 warmup epochs, then fixed."""
    return 1 if epoch <= 3 else wab_batch


def wab_cycle_steps(epoch: int, train_set_size: int, wab_batch: int = 16, total_epochs: int = 30) -> int:
    """Cosine cycle length for the combined schedule.

    First cycle spans the 3 warmup epochs at batch 1 (3 * N steps); the
    second spans the remaining epochs at the fixed batch
    ((total_epochs - 3) * ceil(N / B) steps).  At N=60000, B=16 and 30
    epochs this yields 180000 and 101250.
    """
    if epoch <= 3:
        return 3 * train_set_size
    steps_per_epoch = -(-train_set_size // wab_batch)
    return max(1, (total_epochs - 3) * steps_per_epoch)


def warm_adabatch(
    lr_min: float,
    lr_max: float,
    epoch: int,
    state: ScheduleState,
    train_set_size: int,
    wab_batch: int = 16,
    total_epochs: int = 30,
):
    """One step of the combined warm-restart + adaptive-batch schedule.

    Returns ``(lr, batch_size, next_state)``.  Step counting restarts from
    zero when crossing from the warmup cycle (epochs 1-3, batch 1) into the
    long cycle (batch ``wab_batch``).
    """
    if epoch >= 4 and state.epoch <= 3:
        state = replace(state, t_curr=0)
    cycle = wab_cycle_steps(epoch, train_set_size, wab_batch, total_epochs)
    lr, state = lr_warm_restarts(lr_min, lr_max, state, cycle)
    return lr, wab_batch_size(epoch, wab_batch), replace(state, epoch=epoch)


class ScheduleTrace:
    """Dense per-step schedule: parallel arrays of epoch, step, lr, batch."""

    def __init__(self, epoch, step, lr, batch):
        self.epoch = np.asarray(epoch, dtype=np.int32)
        self.step = np.asarray(step, dtype=np.int64)
        self.lr = np.asarray(lr, dtype=np.float64)
        self.batch = np.asarray(batch, dtype=np.int32)

    def __len__(self):
        return len(self.lr)

    def __iter__(self):
        return zip(self.epoch.tolist(), self.step.tolist(), self.lr.tolist(), self.batch.tolist())

    def rows(self):
        return list(self)

    def epoch_slice(self, epoch: int):
        mask = self.epoch == epoch
        return self.lr[mask], self.batch[mask]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "step", "lr", "batch_size"])
            for row in self:
                writer.writerow([row[0], row[1], repr(row[2]), row[3]])


def batch_plan(lr_policy: LrPolicy, batch_policy: BatchPolicy, epochs: int) -> list[int]:
    """Per-epoch batch sizes. The combined schedule dictates its own plan."""
    if lr_policy.variant == WARM_ADABATCH:
        return [wab_batch_size(e, batch_policy.base_batch) for e in range(1, epochs + 1)]
    if batch_policy.variant == ADABATCH:
        return [batch_adabatch(batch_policy.growth_exponent, e) for e in range(1, epochs + 1)]
    return [batch_policy.base_batch] * epochs


def schedule_trace(
    lr_policy: LrPolicy,
    batch_policy: BatchPolicy,
    epochs: int,
    train_set_size: int,
) -> ScheduleTrace:
    """Evaluate the full deterministic schedule for a training run.

    The step column is the 0-based global step; epochs are 1-based.  Length
    equals the sum over epochs of ceil(N / batch(epoch)).
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    if train_set_size < 1:
        raise ValueError("train_set_size must be >= 1")

    plan = batch_plan(lr_policy, batch_policy, epochs)
    steps_per_epoch = [-(-train_set_size // b) for b in plan]
    total = sum(steps_per_epoch)

    epoch_col = np.repeat(np.arange(1, epochs + 1), steps_per_epoch)
    step_col = np.arange(total)
    batch_col = np.repeat(plan, steps_per_epoch)
    lr_col = np.empty(total, dtype=np.float64)

    v = lr_policy.variant
    if v == FIXED:
        lr_col[:] = lr_fixed(lr_policy)
    elif v == EXP_DECAY:
        lr_col[:] = lr_policy.lr_max * lr_policy.decay_rate ** (step_col / lr_policy.decay_steps)
    elif v == ONE_CYCLE:
        ts_total = lr_policy.total_steps if lr_policy.total_steps is not None else total
        for i in range(total):
            lr_col[i] = lr_one_cycle(lr_policy.lr_min, lr_policy.lr_max, ts_total, i)
    elif v == WARM_RESTARTS:
        state = ScheduleState()
        i = 0
        for e in range(1, epochs + 1):
            cycle = lr_policy.cycle_steps if lr_policy.cycle_steps is not None else steps_per_epoch[e - 1]
            for _ in range(steps_per_epoch[e - 1]):
                lr_col[i], state = lr_warm_restarts(lr_policy.lr_min, lr_policy.lr_max, state, cycle)
                i += 1
    elif v == WARM_ADABATCH:
        state = ScheduleState()
        i = 0
        for e in range(1, epochs + 1):
            for _ in range(steps_per_epoch[e - 1]):
                lr_col[i], _, state = warm_adabatch(
                    lr_policy.lr_min,
                    lr_policy.lr_max,
                    e,
                    state,
                    train_set_size,
                    batch_policy.base_batch,
                    total_epochs=epochs,
                )
                i += 1
    else:  # pragma: no cover - guarded by LrPolicy validation
        raise ValueError(f"unhandled variant {v}")

    return ScheduleTrace(epoch_col, step_col, lr_col, batch_col)


PRESET_NAMES = ("fixed", "expdecay", "ocp", "warmrestarts", "adabatch", "wab")


def policy_preset(name: str, base_batch: int = 16):
    """Map a policy name to its (LrPolicy, BatchPolicy) pair.

    ``adabatch`` pairs a fixed rate with the stepped batch plan; ``wab``
    uses base_batch as the post-warmup batch size.
    """
    if name == "adabatch":
        return LrPolicy(variant=FIXED), BatchPolicy(variant=ADABATCH, base_batch=base_batch)
    if name in (FIXED, EXP_DECAY, ONE_CYCLE, WARM_RESTARTS, WARM_ADABATCH):
        return LrPolicy(variant=name), BatchPolicy(variant=CONSTANT, base_batch=base_batch)
    raise ValueError(f"unknown policy {name!r}; valid: {', '.join(PRESET_NAMES)}")
