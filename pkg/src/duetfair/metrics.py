"""Segmentation quality and fairness measurement.

Dice and IoU use the standard overlap definitions with the both-empty
convention dice = iou = 1 (a perfect prediction of an empty mask is not
penalized). The equity-scaled (ES) variant divides a population metric
by one plus the summed absolute deviations of the subgroup means from
the population value, so equal subgroup performance leaves the metric
untouched and any disparity shrinks it.

Bootstrap confidence intervals resample the pooled per-sample values
with replacement using the portable seeded generator (one substream per
resample, so parallel evaluation is result-identical) and report
empirical percentiles with linear interpolation. ES statistics are
recomputed per resample from the resample's own population and subgroup
means; a resample that misses a subgroup entirely simply contributes no
deviation term for it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import GroupId
from .rng import substream

BINARIZE_THRESHOLD = 0.5


@dataclass(frozen=True)
class BootstrapConfig:
    resamples: int = 1000
    level: float = 0.95
    seed: int = 0

    def __post_init__(self):
        if self.resamples < 1:
            raise ValueError("resamples must be >= 1")
        if not 0.0 < self.level < 1.0:
            raise ValueError("level must lie strictly between 0 and 1")


@dataclass(frozen=True)
class SampleMetrics:
    sample_id: int
    group: GroupId
    hard_flag: bool
    dice: float
    iou: float
    loss: float


@dataclass(frozen=True)
class GroupMetrics:
    label: str
    mean_dice: float
    mean_iou: float
    n: int


@dataclass(frozen=True)
class MetricsReport:
    per_sample: tuple[SampleMetrics, ...]
    per_group: dict[GroupId, GroupMetrics]
    population: tuple[float, float]  # (mean dice, mean iou)
    es: tuple[float, float]  # (es dice, es iou)
    worst_group: tuple[GroupId, float, float]  # (group, dice, iou)
    by_hard_flag: dict[str, GroupMetrics]
    cis: dict[str, tuple[float, float]] | None = None


def dice_iou(pred_mask: np.ndarray, true_mask: np.ndarray) -> tuple[float, float]:
    """Overlap metrics for one binary mask pair; both empty gives (1, 1)."""
    if pred_mask.shape != true_mask.shape:
        raise ValueError(f"mask shapes differ: {pred_mask.shape} vs {true_mask.shape}")
    p = pred_mask.astype(bool)
    g = true_mask.astype(bool)
    inter = int(np.count_nonzero(p & g))
    psum = int(np.count_nonzero(p))
    gsum = int(np.count_nonzero(g))
    if psum + gsum == 0:
        return 1.0, 1.0
    dice = 2.0 * inter / (psum + gsum)
    union = psum + gsum - inter
    iou = inter / union
    return dice, iou


def equity_scaled(population_value: float, subgroup_values: Sequence[float]) -> float:
    """population / (1 + sum of |population - subgroup| deviations)."""
    if len(subgroup_values) == 0:
        raise ValueError("subgroup_values must be non-empty")
    delta = float(sum(abs(population_value - v) for v in subgroup_values))
    return population_value / (1.0 + delta)


def worst_group(per_group: dict[GroupId, float]) -> tuple[GroupId, float]:
    """Minimum-mean group; ties resolve to the lowest group id."""
    if not per_group:
        raise ValueError("per_group must be non-empty")
    g = min(sorted(per_group), key=lambda k: per_group[k])
    return g, per_group[g]


def _percentile_interval(stats: np.ndarray, level: float) -> tuple[float, float]:
    alpha = (1.0 - level) / 2.0
    lo = float(np.percentile(stats, 100.0 * alpha, method="linear"))
    hi = float(np.percentile(stats, 100.0 * (1.0 - alpha), method="linear"))
    return lo, hi


def bootstrap_ci(
    per_sample_values: Sequence[float],
    statistic: str,
    config: BootstrapConfig,
    groups: Sequence[int] | None = None,
) -> tuple[float, float]:
    """Percentile bootstrap interval for ``statistic`` of the pooled values.

    ``statistic`` is "mean" or "es"; "es" requires per-sample ``groups``
    and recomputes the equity-scaled composition on every resample.
    """
    values = np.asarray(per_sample_values, dtype=np.float64)
    n = len(values)
    if n == 0:
        raise ValueError("per_sample_values must be non-empty")
    if statistic not in ("mean", "es"):
        raise ValueError(f"unknown statistic: {statistic!r}")
    if statistic == "es":
        if groups is None:
            raise ValueError("es statistic requires per-sample groups")
        groups = np.asarray(groups, dtype=np.int64)
        group_ids = np.unique(groups)

    stats = np.empty(config.resamples)
    for r in range(config.resamples):
        idx = substream(config.seed, r).integers(n, n)
        sample = values[idx]
        if statistic == "mean":
            stats[r] = sample.mean()
        else:
            pop = float(sample.mean())
            gs = groups[idx]
            subs = [float(sample[gs == g].mean()) for g in group_ids if np.any(gs == g)]
            stats[r] = equity_scaled(pop, subs)
    return _percentile_interval(stats, config.level)


def binarize(pred: np.ndarray) -> np.ndarray:
    return (pred >= BINARIZE_THRESHOLD).astype(np.float64)


def _mean_metrics(rows: list[SampleMetrics], label: str) -> GroupMetrics:
    return GroupMetrics(
        label=label,
        mean_dice=float(np.mean([r.dice for r in rows])),
        mean_iou=float(np.mean([r.iou for r in rows])),
        n=len(rows),
    )


def build_report(
    per_sample: list[SampleMetrics],
    group_labels: Sequence[str],
    bootstrap: BootstrapConfig | None = None,
) -> MetricsReport:
    """Assemble the full report from per-sample rows."""
    if not per_sample:
        raise ValueError("per_sample must be non-empty")
    dices = np.asarray([r.dice for r in per_sample])
    ious = np.asarray([r.iou for r in per_sample])
    groups = np.asarray([r.group for r in per_sample])

    per_group: dict[GroupId, GroupMetrics] = {}
    for g in sorted(set(int(v) for v in groups)):
        rows = [r for r in per_sample if r.group == g]
        per_group[g] = _mean_metrics(rows, group_labels[g])

    population = (float(dices.mean()), float(ious.mean()))
    es = (
        equity_scaled(population[0], [m.mean_dice for m in per_group.values()]),
        equity_scaled(population[1], [m.mean_iou for m in per_group.values()]),
    )
    wg, wg_dice = worst_group({g: m.mean_dice for g, m in per_group.items()})
    worst = (wg, wg_dice, per_group[wg].mean_iou)

    by_hard: dict[str, GroupMetrics] = {}
    for name, flag in (("hard", True), ("easy", False)):
        rows = [r for r in per_sample if r.hard_flag == flag]
        if rows:
            by_hard[name] = _mean_metrics(rows, name)

    cis = None
    if bootstrap is not None:
        cis = {
            "mean_dice": bootstrap_ci(dices, "mean", bootstrap),
            "es_dice": bootstrap_ci(dices, "es", bootstrap, groups=groups),
        }
    return MetricsReport(
        per_sample=tuple(per_sample),
        per_group=per_group,
        population=population,
        es=es,
        worst_group=worst,
        by_hard_flag=by_hard,
        cis=cis,
    )


def report_to_json(report: MetricsReport) -> str:
    doc = {
        "per_sample": [
            {
                "sample_id": r.sample_id,
                "group": r.group,
                "hard_flag": bool(r.hard_flag),
                "dice": r.dice,
                "iou": r.iou,
                "loss": r.loss,
            }
            for r in report.per_sample
        ],
        "per_group": {
            str(g): {"label": m.label, "mean_dice": m.mean_dice, "mean_iou": m.mean_iou, "n": m.n}
            for g, m in report.per_group.items()
        },
        "population": {"mean_dice": report.population[0], "mean_iou": report.population[1]},
        "es": {"es_dice": report.es[0], "es_iou": report.es[1]},
        "worst_group": {
            "group": report.worst_group[0],
            "label": report.per_group[report.worst_group[0]].label,
            "dice": report.worst_group[1],
            "iou": report.worst_group[2],
        },
        "by_hard_flag": {
            k: {"mean_dice": m.mean_dice, "mean_iou": m.mean_iou, "n": m.n}
            for k, m in report.by_hard_flag.items()
        },
        "cis": None if report.cis is None else {k: list(v) for k, v in report.cis.items()},
    }
    return json.dumps(doc, separators=(",", ":"))


def report_to_csv(report: MetricsReport) -> str:
    lines = ["sample_id,group,hard_flag,dice,iou,loss"]
    for r in report.per_sample:
        lines.append(f"{r.sample_id},{r.group},{int(r.hard_flag)},{r.dice!r},{r.iou!r},{r.loss!r}")
    return "\n".join(lines) + "\n"
