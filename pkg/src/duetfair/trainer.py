"""Deterministic momentum-SGD training loop and cohort evaluation.

The loop is plain SGD with momentum (v <- mu*v + g; p <- p - lr*v);
given identical cohort, configs and seeds, two runs produce
bit-identical logs and parameters. Full-batch mode solves the inner
worst-case problem over each complete subgroup every step. In minibatch
mode the inner problem runs over the within-batch members of each
subgroup, and a group with fewer than 4 members in the batch falls back
to its plain mean for that step (tilting a handful of samples is
degenerate); aggregation weights renormalize over the groups present.

Each epoch record holds the diagnostics at the parameters the epoch
started from: objective value, per-group mean and robust risks (robust
risks use the objective's radii, or the default radius for variants
without one), and the population mean loss.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .core import Cohort, GroupId, GroupPartition, LossVector, build_partition
from .metrics import BootstrapConfig, MetricsReport, SampleMetrics, binarize, build_report, dice_iou
from .model import (
    ModelConfig,
    ModelParams,
    _patches,
    init_params,
    loss_and_grad_arrays,
    predict_and_loss_arrays,
)
from .objectives import (
    AggregationWeights,
    ObjectiveConfig,
    Variant,
    aggregate_objective,
    objective_gradient,
)
from .robust import RobustnessConfig, solve_robust_risk
from .rng import substream

_SHUFFLE_STREAM = 0x73687566  # epoch-shuffle substream id offset
_MIN_TILT_GROUP = 4


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    learning_rate: float = 0.05
    momentum: float = 0.9
    batch_mode: Union[str, int] = "full"  # "full" or a minibatch size
    seed: int = 0
    eval_every: int = 0  # 0 disables in-training metric reports

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_mode != "full" and (not isinstance(self.batch_mode, int) or self.batch_mode < 1):
            raise ValueError("batch_mode must be 'full' or a positive integer")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    objective: float
    mean_loss: float
    group_risk: dict[GroupId, float]
    group_robust_risk: dict[GroupId, float]
    metrics: MetricsReport | None = None


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)
    final_params: ModelParams | None = None


class TrainingAborted(RuntimeError):
    def __init__(self, epoch: int, step: int, message: str):
        super().__init__(f"training aborted at epoch {epoch}, step {step}: {message}")
        self.epoch = epoch
        self.step = step


@dataclass
class _Stacked:
    images: np.ndarray
    masks: np.ndarray
    groups: np.ndarray
    sample_ids: np.ndarray
    patches: np.ndarray


def _stack(cohort: Cohort) -> _Stacked:
    images = np.stack([s.image for s in cohort.samples])
    n, h, w = images.shape
    return _Stacked(
        images=images,
        masks=np.stack([s.mask for s in cohort.samples]),
        groups=np.asarray([s.group for s in cohort.samples]),
        sample_ids=np.asarray([s.sample_id for s in cohort.samples]),
        patches=_patches(images).reshape(n, h * w, 9),
    )


def _diagnostics(
    epoch: int,
    losses: LossVector,
    partition: GroupPartition,
    objective_value: float,
    objective_config: ObjectiveConfig,
    metrics: MetricsReport | None,
) -> EpochRecord:
    values = losses.values
    group_risk = {g: float(values[idx].mean()) for g, idx in partition.index_sets.items()}
    group_rob = {
        g: solve_robust_risk(values[idx], objective_config.rho_for(g)).value
        for g, idx in partition.index_sets.items()
    }
    return EpochRecord(
        epoch=epoch,
        objective=objective_value,
        mean_loss=float(values.mean()),
        group_risk=group_risk,
        group_robust_risk=group_rob,
        metrics=metrics,
    )


def _batch_partition(groups: np.ndarray) -> GroupPartition:
    ids = sorted(set(int(g) for g in groups))
    index_sets = {g: np.flatnonzero(groups == g) for g in ids}
    sizes = {g: len(v) for g, v in index_sets.items()}
    n = len(groups)
    return GroupPartition(index_sets=index_sets, sizes=sizes, frequencies={g: sizes[g] / n for g in ids})


def _batch_objective_config(base: ObjectiveConfig, partition: GroupPartition) -> ObjectiveConfig:
    ids = partition.group_ids
    rho = {g: (base.rho_for(g) if partition.sizes[g] >= _MIN_TILT_GROUP else 0.0) for g in ids}
    agg = None
    if base.variant == Variant.FAIRDRO:
        if base.aggregation is None:
            agg = AggregationWeights.uniform(ids)
        else:
            present = {g: base.aggregation.w[g] for g in ids}
            total = sum(present.values())
            agg = AggregationWeights(w={g: v / total for g, v in present.items()})
    return ObjectiveConfig(
        variant=base.variant,
        robustness=RobustnessConfig(rho=rho),
        lambda_rob=base.lambda_rob,
        aggregation=agg,
    )


def train(
    cohort: Cohort,
    model_config: ModelConfig,
    objective_config: ObjectiveConfig,
    train_config: TrainConfig,
) -> tuple[ModelParams, TrainLog]:
    """Minimize the configured objective on the cohort; returns the final
    parameters and the per-epoch log (see module docstring)."""
    partition = build_partition(cohort)
    data = _stack(cohort)
    params = init_params(model_config, train_config.seed)
    flat = params.flat.copy()
    layout = params.layout
    velocity = np.zeros_like(flat)
    log = TrainLog()
    n = len(cohort)
    lr, mu = train_config.learning_rate, train_config.momentum

    for epoch in range(train_config.epochs):
        current = ModelParams(flat=flat.copy(), layout=layout)

        if train_config.batch_mode == "full":
            losses, grads = loss_and_grad_arrays(
                data.images, data.masks, data.groups, data.sample_ids, current, model_config, patches=data.patches
            )
            evaluation = aggregate_objective(losses, partition, objective_config, sample_ids=data.sample_ids)
            if not np.isfinite(evaluation.value):
                raise TrainingAborted(epoch, 0, "non-finite objective")
            metrics = None
            if train_config.eval_every > 0 and epoch % train_config.eval_every == 0:
                metrics = evaluate(cohort, current, model_config, bootstrap=None)
            log.records.append(
                _diagnostics(epoch, losses, partition, evaluation.value, objective_config, metrics)
            )
            step_grad = objective_gradient(evaluation, grads)
            velocity = mu * velocity + step_grad
            flat = flat - lr * velocity
        else:
            # epoch-start diagnostics on the full cohort (forward only)
            _, loss_values = predict_and_loss_arrays(
                data.images, data.masks, data.groups, current, model_config, patches=data.patches
            )
            losses = LossVector(values=loss_values)
            full_eval = aggregate_objective(losses, partition, objective_config, sample_ids=data.sample_ids)
            if not np.isfinite(full_eval.value):
                raise TrainingAborted(epoch, 0, "non-finite objective")
            metrics = None
            if train_config.eval_every > 0 and epoch % train_config.eval_every == 0:
                metrics = evaluate(cohort, current, model_config, bootstrap=None)
            log.records.append(
                _diagnostics(epoch, losses, partition, full_eval.value, objective_config, metrics)
            )

            order = substream(train_config.seed, _SHUFFLE_STREAM + epoch).permutation(n)
            size = int(train_config.batch_mode)
            for step, lo in enumerate(range(0, n, size)):
                idx = order[lo : lo + size]
                current = ModelParams(flat=flat.copy(), layout=layout)
                b_losses, b_grads = loss_and_grad_arrays(
                    data.images[idx],
                    data.masks[idx],
                    data.groups[idx],
                    data.sample_ids[idx],
                    current,
                    model_config,
                    patches=data.patches[idx],
                )
                b_partition = _batch_partition(data.groups[idx])
                b_config = _batch_objective_config(objective_config, b_partition)
                b_eval = aggregate_objective(b_losses, b_partition, b_config, sample_ids=data.sample_ids[idx])
                if not np.isfinite(b_eval.value):
                    raise TrainingAborted(epoch, step, "non-finite objective")
                step_grad = objective_gradient(b_eval, b_grads)
                velocity = mu * velocity + step_grad
                flat = flat - lr * velocity

    final = ModelParams(flat=flat, layout=layout)
    log.final_params = final
    return final, log


def evaluate(
    cohort: Cohort,
    params: ModelParams,
    model_config: ModelConfig,
    bootstrap: BootstrapConfig | None,
) -> MetricsReport:
    """Forward every sample, binarize at 0.5, and build the full report
    (CIs for mean Dice and ES-Dice when a bootstrap config is given)."""
    data = _stack(cohort)
    preds, losses = predict_and_loss_arrays(
        data.images, data.masks, data.groups, params, model_config, patches=data.patches
    )
    h, w = cohort.grid_shape
    rows = []
    for i, s in enumerate(cohort.samples):
        d, j = dice_iou(binarize(preds[i].reshape(h, w)), s.mask)
        rows.append(
            SampleMetrics(
                sample_id=s.sample_id,
                group=s.group,
                hard_flag=s.hard_flag,
                dice=d,
                iou=j,
                loss=float(losses[i]),
            )
        )
    return build_report(rows, cohort.group_labels, bootstrap=bootstrap)


def log_to_jsonl(log: TrainLog) -> str:
    """One JSON record per epoch; metrics reports are omitted from lines
    (they are emitted separately by the evaluation command)."""
    lines = []
    for rec in log.records:
        lines.append(
            json.dumps(
                {
                    "epoch": rec.epoch,
                    "objective": rec.objective,
                    "mean_loss": rec.mean_loss,
                    "group_risk": {str(g): v for g, v in rec.group_risk.items()},
                    "group_robust_risk": {str(g): v for g, v in rec.group_robust_risk.items()},
                },
                separators=(",", ":"),
            )
        )
    return "\n".join(lines) + "\n"
