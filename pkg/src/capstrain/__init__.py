"""Capsule-network training with adaptive learning-rate and batch-size
policies, parameter-reduction variants, and Pareto trade-off analysis."""

from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    DatasetSplit,
    load_split,
    normalize,
    ordered_batches,
    parse_idx,
    serialize_idx,
    shuffled_batches,
    subset,
    synthetic_split,
)
from .experiments import (
    ExperimentPoint,
    default_sweep,
    emit_schedule_plot,
    experiment_points,
    pareto_front,
    run_policy_experiment,
    summary_table,
)
from .model import (
    CapsNetConfig,
    CapsNetModel,
    capsnet_loss,
    config_for_scale,
    count_parameters,
    dynamic_routing,
    forward_encoder,
    make_model,
    margin_loss,
    mask_and_decode,
    predict,
    total_loss,
)
from .schedules import (
    BatchPolicy,
    LrPolicy,
    ScheduleState,
    batch_adabatch,
    lr_exp_decay,
    lr_fixed,
    lr_one_cycle,
    lr_warm_restarts,
    policy_preset,
    schedule_trace,
    warm_adabatch,
)
from .tensor import Tape, Tensor, conv2d, grad_check, matmul, softmax, squash
from .training import (
    Adam,
    RunConfig,
    RunMetrics,
    adam_step,
    average_runs,
    epochs_to_reach,
    evaluate,
    train,
    write_metrics_csv,
)

__version__ = "0.1.0"
