"""Loss-aggregation rules and their exact first-order weights.

Every variant reduces, for gradient purposes, to a composite per-sample
weight vector c: the parameter gradient of the aggregate objective is
sum_i c_i * grad(loss_i). For the robust variants the inner worst-case
weights are held fixed at their optimum when forming c (a subgradient
of the max, the gradient wherever the worst case is unique).

Variants:

    ERM              mean loss; c_i = 1/n
    FAIRDRO          sum_g w_g * (robust risk of group g);
                     c_i = w_g * q_i with q the group's tilted weights
    GROUPDRO         max_g (mean risk of g); c uniform on the arg-max
                     group (ties to the lowest group id), zero elsewhere
    FAIRDRO_PENALTY  mean loss + lambda * max_g (robust risk of g);
                     c_i = 1/n plus lambda * q_i inside the arg-max group
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .core import GroupId, GroupPartition, LossVector
from .model import BatchGradients
from .robust import DEFAULT_RHO, RobustnessConfig, RobustRiskSolution, solve_robust_risk

_SIMPLEX_TOL = 1e-12


class Variant(str, Enum):
    ERM = "erm"
    FAIRDRO = "fairdro"
    GROUPDRO = "groupdro"
    FAIRDRO_PENALTY = "fairdro-penalty"


@dataclass(frozen=True)
class AggregationWeights:
    """Group aggregation weights w_g >= 0 summing to 1."""

    w: dict[GroupId, float]

    def __post_init__(self):
        vals = list(self.w.values())
        if any(v < 0 for v in vals):
            raise ValueError("aggregation weights must be non-negative")
        if abs(sum(vals) - 1.0) > 1e-10:
            raise ValueError(f"aggregation weights sum to {sum(vals)}, expected 1")

    @classmethod
    def uniform(cls, group_ids) -> "AggregationWeights":
        ids = list(group_ids)
        return cls(w={g: 1.0 / len(ids) for g in ids})

    @classmethod
    def frequencies(cls, partition: GroupPartition) -> "AggregationWeights":
        return cls(w=dict(partition.frequencies))


@dataclass(frozen=True)
class TwoLevelWeights:
    """Explicit (alpha over groups) x (beta within each group) weighting."""

    alpha: dict[GroupId, float]
    beta: dict[GroupId, np.ndarray]

    def __post_init__(self):
        if abs(sum(self.alpha.values()) - 1.0) > _SIMPLEX_TOL:
            raise ValueError("alpha is not on the group simplex")
        if any(a < 0 for a in self.alpha.values()):
            raise ValueError("alpha has negative entries")
        for g, b in self.beta.items():
            b = np.asarray(b, dtype=np.float64)
            if np.any(b < 0) or abs(float(b.sum()) - 1.0) > _SIMPLEX_TOL:
                raise ValueError(f"beta for group {g} is not on its simplex")


@dataclass(frozen=True)
class ObjectiveConfig:
    variant: Variant
    robustness: RobustnessConfig | None = None
    lambda_rob: float = 1.0
    aggregation: AggregationWeights | None = None  # FAIRDRO only; default uniform

    def __post_init__(self):
        if self.lambda_rob < 0:
            raise ValueError("lambda_rob must be >= 0")

    def rho_for(self, group: GroupId) -> float:
        if self.robustness is None:
            return DEFAULT_RHO
        return self.robustness.rho_for(group)


@dataclass(frozen=True)
class ObjectiveEvaluation:
    value: float
    per_sample_weights: np.ndarray
    per_group: dict[GroupId, tuple[float, RobustRiskSolution | None]]
    sample_ids: np.ndarray | None = None


def subgroup_risks(losses: LossVector, partition: GroupPartition) -> dict[GroupId, float]:
    """Mean loss per group."""
    values = losses.values
    out = {}
    for g, idx in partition.index_sets.items():
        if len(idx) == 0:
            raise ValueError(f"group {g} has no samples")
        out[g] = float(values[idx].mean())
    return out


def aggregate_objective(
    losses: LossVector,
    partition: GroupPartition,
    config: ObjectiveConfig,
    sample_ids: np.ndarray | None = None,
) -> ObjectiveEvaluation:
    """Evaluate one aggregation variant; see module docstring for the
    value and composite-weight contract of each."""
    values = losses.values
    n = len(values)
    if partition.total != n:
        raise ValueError(f"partition covers {partition.total} samples, losses have {n}")
    group_ids = partition.group_ids
    c = np.zeros(n)
    per_group: dict[GroupId, tuple[float, RobustRiskSolution | None]] = {}

    if config.variant == Variant.ERM:
        value = float(values.mean())
        c[:] = 1.0 / n
        for g in group_ids:
            per_group[g] = (float(values[partition.index_sets[g]].mean()), None)

    elif config.variant == Variant.FAIRDRO:
        agg = config.aggregation or AggregationWeights.uniform(group_ids)
        value = 0.0
        for g in group_ids:
            idx = partition.index_sets[g]
            sol = solve_robust_risk(values[idx], config.rho_for(g))
            w_g = agg.w[g]
            value += w_g * sol.value
            c[idx] = w_g * sol.weights
            per_group[g] = (sol.value, sol)

    elif config.variant == Variant.GROUPDRO:
        risks = subgroup_risks(losses, partition)
        worst = max(group_ids, key=lambda g: (risks[g], -g))
        value = risks[worst]
        idx = partition.index_sets[worst]
        c[idx] = 1.0 / len(idx)
        for g in group_ids:
            per_group[g] = (risks[g], None)

    elif config.variant == Variant.FAIRDRO_PENALTY:
        sols = {}
        for g in group_ids:
            idx = partition.index_sets[g]
            sols[g] = solve_robust_risk(values[idx], config.rho_for(g))
        worst = max(group_ids, key=lambda g: (sols[g].value, -g))
        value = float(values.mean()) + config.lambda_rob * sols[worst].value
        c[:] = 1.0 / n
        c[partition.index_sets[worst]] += config.lambda_rob * sols[worst].weights
        for g in group_ids:
            per_group[g] = (sols[g].value, sols[g])

    else:
        raise ValueError(f"unknown objective variant: {config.variant!r}")

    return ObjectiveEvaluation(value=value, per_sample_weights=c, per_group=per_group, sample_ids=sample_ids)


def composite_sample_weights(two_level: TwoLevelWeights, partition: GroupPartition) -> np.ndarray:
    """Collapse (alpha, beta) into per-sample weights c_i = alpha_g * beta_i;
    the collapsed weights sum to 1."""
    n = partition.total
    c = np.zeros(n)
    for g, idx in partition.index_sets.items():
        if g not in two_level.alpha:
            raise ValueError(f"alpha missing group {g}")
        beta = np.asarray(two_level.beta[g], dtype=np.float64)
        if len(beta) != len(idx):
            raise ValueError(f"beta for group {g} has length {len(beta)}, expected {len(idx)}")
        c[idx] = two_level.alpha[g] * beta
    return c


def objective_gradient(evaluation: ObjectiveEvaluation, grads: BatchGradients) -> np.ndarray:
    """sum_i c_i * grad(loss_i) with c from the evaluation (Danskin form)."""
    if len(evaluation.per_sample_weights) != len(grads.sample_ids):
        raise ValueError("evaluation and gradient batch sizes differ")
    if evaluation.sample_ids is not None and not np.array_equal(evaluation.sample_ids, grads.sample_ids):
        raise ValueError("evaluation and gradients come from different batches")
    return grads.combine(evaluation.per_sample_weights)
