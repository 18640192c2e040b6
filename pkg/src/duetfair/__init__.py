"""Subgroup-conditioned distributionally robust risk optimization on a
synthetic segmentation testbed: KL-ball worst-case risk within each
subgroup, a subgroup-routed mixture-of-experts adaptation layer,
baseline objectives, and equity-scaled fairness metrics."""

__version__ = "0.1.0"

from .core import (
    Cohort,
    GroupPartition,
    LossVector,
    Sample,
    Subgroup,
    build_partition,
    validate_cohort,
)
from .metrics import BootstrapConfig, MetricsReport, bootstrap_ci, dice_iou, equity_scaled, worst_group
from .model import ModelConfig, ModelParams, dmoe_adapt, forward, init_params, loss_and_grad, per_sample_loss
from .objectives import (
    AggregationWeights,
    ObjectiveConfig,
    TwoLevelWeights,
    Variant,
    aggregate_objective,
    composite_sample_weights,
    objective_gradient,
    subgroup_risks,
)
from .robust import (
    RobustnessConfig,
    RobustRiskSolution,
    brute_force_primal,
    dual_objective,
    kl_divergence,
    solve_robust_risk,
    tilted_weights,
)
from .synth import SynthConfig, default_benchmark_config, generate_cohort
from .trainer import TrainConfig, TrainLog, evaluate, train
