"""Training orchestration: per-step schedule queries, adaptive-moment
updates, per-epoch evaluation on the ordered test split, multi-run
averaging, and metrics CSV export.

Reference mode is the default: single-threaded, fixed seeds, so two runs
with the same configuration produce identical loss traces bit for bit.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import save_checkpoint
from .data import DatasetSplit, ordered_batches, shuffled_batches
from .model import CapsNetConfig, capsnet_loss, count_parameters, forward_encoder, make_model, predict
from .schedules import BatchPolicy, LrPolicy, batch_plan, schedule_trace
from .tensor import Tape, Tensor

__all__ = [
    "Adam",
    "adam_step",
    "RunConfig",
    "EpochRecord",
    "RunMetrics",
    "AveragedMetrics",
    "train",
    "evaluate",
    "epochs_to_reach",
    "average_runs",
    "write_metrics_csv",
    "METRICS_COLUMNS",
]


def adam_step(weights, grad, m, v, t, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected adaptive-moment update; returns (weights, m, v).

    ``t`` is the 1-based step count.  Pure: inputs are not modified.
    """
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    return weights - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


class Adam:
    """Adaptive-moment optimizer over a list of tensors.

    The scheduled learning rate is passed to every :meth:`step`, scaling
    the update directly; there is no internal decay.
    """

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]
        self._scratch = [np.empty_like(p.data) for p in self.params]

    def step(self, lr: float):
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, m, v, tmp in zip(self.params, self._m, self._v, self._scratch):
            g = p.grad
            if g is None:
                continue
            # allocation-free equivalent of the textbook update (see adam_step)
            m *= self.beta1
            np.multiply(g, 1.0 - self.beta1, out=tmp)
            m += tmp
            v *= self.beta2
            np.multiply(g, g, out=tmp)
            tmp *= 1.0 - self.beta2
            v += tmp
            np.divide(v, bc2, out=tmp)
            np.sqrt(tmp, out=tmp)
            tmp += self.eps
            np.divide(m, tmp, out=tmp)
            tmp *= lr / bc1
            p.data -= tmp


@dataclass
class RunConfig:
    """Everything one training run depends on."""

    model_config: CapsNetConfig
    lr_policy: LrPolicy
    batch_policy: BatchPolicy
    epochs: int = 30
    seed: int = 0
    runs: int = 5
    dataset: str = "mnist"
    label: str = ""
    mask_by_max_always: bool = False
    eval_batch: int = 256
    dtype: type = np.float32
    checkpoint_path: str | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.runs < 1:
            raise ValueError("runs must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    test_accuracy: float
    train_loss: float
    batch_size: int
    lr_end: float
    steps: int
    elapsed_s: float


@dataclass
class RunMetrics:
    """Per-epoch records plus run identity, for one seed."""

    label: str
    policy: str
    seed: int
    weight_sharing: bool
    reduced_decoder: bool
    parameter_count: int
    records: list = field(default_factory=list)
    lr_applied: list = field(default_factory=list)
    diverged: bool = False
    diverged_at: tuple | None = None

    def accuracies(self):
        return [r.test_accuracy for r in self.records]

    @property
    def max_accuracy(self):
        return max(self.accuracies())

    @property
    def epoch_of_max(self):
        accs = self.accuracies()
        return accs.index(max(accs)) + 1

    @property
    def run_id(self):
        return f"{self.label or self.policy}#s{self.seed}"


def train(cfg: RunConfig, train_split: DatasetSplit, test_split: DatasetSplit) -> RunMetrics:
    """Run one seeded training and evaluate after every epoch.

    A non-finite loss aborts the run: the metrics carry ``diverged=True``
    and the (epoch, global step) where it happened; completed epochs keep
    their records.  When ``checkpoint_path`` is set, weights are written at
    every new best test accuracy.
    """
    model = make_model(cfg.model_config, seed=cfg.seed, dtype=cfg.dtype)
    n = len(train_split)
    trace = schedule_trace(cfg.lr_policy, cfg.batch_policy, cfg.epochs, n)
    plan = batch_plan(cfg.lr_policy, cfg.batch_policy, cfg.epochs)
    optimizer = Adam(model.parameters())

    policy_name = cfg.lr_policy.variant
    if policy_name == "fixed" and cfg.batch_policy.variant == "adabatch":
        policy_name = "adabatch"
    metrics = RunMetrics(
        label=cfg.label or policy_name,
        policy=policy_name,
        seed=cfg.seed,
        weight_sharing=cfg.model_config.weight_sharing,
        reduced_decoder=cfg.model_config.reduced_decoder,
        parameter_count=count_parameters(cfg.model_config),
    )

    best_accuracy = -1.0
    global_step = 0
    for epoch in range(1, cfg.epochs + 1):
        batch_size = plan[epoch - 1]
        started = time.perf_counter()
        losses = []
        for images, labels in shuffled_batches(train_split, batch_size, cfg.seed, epoch, dtype=cfg.dtype):
            lr = float(trace.lr[global_step])
            # overflow during a diverging run is detected via the loss check;
            # suppress numpy's warnings inside this monitored region
            with np.errstate(all="ignore"):
                with Tape() as tape:
                    loss, _, _ = capsnet_loss(
                        model, Tensor(images), labels, mode="train", mask_by_max_always=cfg.mask_by_max_always
                    )
                loss_value = loss.item()
                if not math.isfinite(loss_value):
                    metrics.diverged = True
                    metrics.diverged_at = (epoch, global_step)
                    return metrics
                tape.backward(loss)
                optimizer.step(lr)
                model.zero_grad()
            losses.append(loss_value)
            metrics.lr_applied.append(lr)
            global_step += 1

        accuracy = evaluate(model, test_split, batch_size=cfg.eval_batch)
        metrics.records.append(
            EpochRecord(
                epoch=epoch,
                test_accuracy=accuracy,
                train_loss=float(np.mean(losses)),
                batch_size=batch_size,
                lr_end=metrics.lr_applied[-1],
                steps=len(losses),
                elapsed_s=time.perf_counter() - started,
            )
        )
        if cfg.checkpoint_path is not None and accuracy > best_accuracy:
            best_accuracy = accuracy
            save_checkpoint(cfg.checkpoint_path, model)
    return metrics


def evaluate(model, test_split: DatasetSplit, batch_size: int = 256) -> float:
    """Fraction of correct predictions over the full split, in stored order."""
    correct = 0
    for images, labels in ordered_batches(test_split, batch_size, dtype=model.dtype.type):
        v = forward_encoder(model, Tensor(images))
        correct += int((predict(v) == labels).sum())
    return correct / len(test_split)


def epochs_to_reach(metrics, threshold: float):
    """First 1-based epoch whose test accuracy reaches ``threshold``; None if never."""
    accuracies = metrics if isinstance(metrics, (list, tuple, np.ndarray)) else metrics.accuracies()
    for i, acc in enumerate(accuracies):
        if acc >= threshold:
            return i + 1
    return None


@dataclass
class AveragedMetrics:
    """Element-wise mean/stddev over runs; summary from the mean curve."""

    label: str
    policy: str
    weight_sharing: bool
    reduced_decoder: bool
    parameter_count: int
    n_runs: int
    mean_accuracy: np.ndarray
    std_accuracy: np.ndarray
    mean_loss: np.ndarray
    std_loss: np.ndarray
    batch_sizes: list
    mean_epoch_seconds: float

    def accuracies(self):
        return list(self.mean_accuracy)

    @property
    def max_accuracy(self):
        return float(self.mean_accuracy.max())

    @property
    def epoch_of_max(self):
        return int(self.mean_accuracy.argmax()) + 1


def average_runs(runs) -> AveragedMetrics:
    """Average per-epoch curves across runs of one configuration."""
    if not runs:
        raise ValueError("no runs to average")
    epoch_counts = {len(r.records) for r in runs}
    if len(epoch_counts) != 1:
        raise ValueError(f"mismatched epoch counts across runs: {sorted(epoch_counts)}")
    acc = np.array([[rec.test_accuracy for rec in r.records] for r in runs])
    loss = np.array([[rec.train_loss for rec in r.records] for r in runs])
    seconds = np.array([[rec.elapsed_s for rec in r.records] for r in runs])
    first = runs[0]
    return AveragedMetrics(
        label=first.label,
        policy=first.policy,
        weight_sharing=first.weight_sharing,
        reduced_decoder=first.reduced_decoder,
        parameter_count=first.parameter_count,
        n_runs=len(runs),
        mean_accuracy=acc.mean(axis=0),
        std_accuracy=acc.std(axis=0),
        mean_loss=loss.mean(axis=0),
        std_loss=loss.std(axis=0),
        batch_sizes=[rec.batch_size for rec in first.records],
        mean_epoch_seconds=float(seconds.mean()),
    )


METRICS_COLUMNS = [
    "run_id",
    "policy",
    "weight_sharing",
    "reduced_decoder",
    "epoch",
    "step_count",
    "lr_end",
    "batch_size",
    "train_loss",
    "test_accuracy",
    "elapsed_s",
]


def write_metrics_csv(path, runs, deterministic: bool = False) -> None:
    """Write one row per (run, epoch).

    ``deterministic=True`` zeroes the wall-clock column so byte-identical
    files can be asserted across replays; everything else is exact training
    output.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
        for run in runs:
            for rec in run.records:
                writer.writerow(
                    [
                        run.run_id,
                        run.policy,
                        int(run.weight_sharing),
                        int(run.reduced_decoder),
                        rec.epoch,
                        rec.steps,
                        repr(rec.lr_end),
                        rec.batch_size,
                        repr(rec.train_loss),
                        repr(rec.test_accuracy),
                        "0.000" if deterministic else f"{rec.elapsed_s:.3f}",
                    ]
                )
