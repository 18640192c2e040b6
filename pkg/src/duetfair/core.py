"""Domain types shared by every other module.

A cohort is an ordered list of image/mask samples, each tagged with a
subgroup id indexing the cohort's group label list. All types are
immutable after construction and safe to share across threads; the
numpy arrays they hold are treated as read-only by convention.

``hard_flag`` marks synthetically-planted difficult samples. It exists
for evaluation-side stratification only; model and objective code never
reads it (asserted by a source-level check in the test suite).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

GroupId = int


@dataclass(frozen=True)
class Subgroup:
    """A subgroup attribute value: small integer id plus display label."""

    id: GroupId
    label: str


@dataclass(frozen=True)
class Sample:
    image: np.ndarray  # (H, W) float64 in [0, 1]
    mask: np.ndarray  # (H, W) values exactly 0 or 1
    group: GroupId
    sample_id: int
    hard_flag: bool = False

    def __post_init__(self):
        if self.image.shape != self.mask.shape or self.image.ndim != 2:
            raise ValueError(
                f"sample {self.sample_id}: image shape {self.image.shape} "
                f"does not match mask shape {self.mask.shape}"
            )


@dataclass(frozen=True)
class Cohort:
    samples: tuple[Sample, ...]
    attribute_name: str
    group_labels: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        object.__setattr__(self, "group_labels", tuple(self.group_labels))

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def num_groups(self) -> int:
        return len(self.group_labels)

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.samples[0].image.shape

    def subgroups(self) -> list[Subgroup]:
        return [Subgroup(i, lab) for i, lab in enumerate(self.group_labels)]


@dataclass(frozen=True)
class GroupPartition:
    """Disjoint index sets covering cohort positions, one per subgroup."""

    index_sets: dict[GroupId, np.ndarray]  # ordered positions per group
    sizes: dict[GroupId, int]
    frequencies: dict[GroupId, float]

    @property
    def group_ids(self) -> list[GroupId]:
        return sorted(self.index_sets)

    @property
    def total(self) -> int:
        return sum(self.sizes.values())


@dataclass(frozen=True)
class LossVector:
    """Per-sample losses aligned with cohort order; finite and non-negative."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", v)
        if v.ndim != 1:
            raise ValueError("loss vector must be one-dimensional")
        if not np.all(np.isfinite(v)):
            raise ValueError("loss vector contains non-finite entries")
        if np.any(v < 0):
            raise ValueError("loss vector contains negative entries")

    def __len__(self) -> int:
        return len(self.values)


def build_partition(cohort: Cohort) -> GroupPartition:
    """Group cohort positions by subgroup id.

    Index sets preserve cohort order, are disjoint, and cover 0..n-1;
    frequencies are n_g / n. Deterministic for identical cohorts.
    """
    if len(cohort) == 0:
        raise ValueError("empty cohort")
    n = len(cohort)
    num_groups = cohort.num_groups
    positions: dict[GroupId, list[int]] = {}
    for pos, sample in enumerate(cohort.samples):
        g = sample.group
        if not 0 <= g < num_groups:
            raise ValueError(
                f"sample {sample.sample_id}: group id {g} out of range "
                f"for {num_groups} declared groups"
            )
        positions.setdefault(g, []).append(pos)
    index_sets = {g: np.asarray(p, dtype=np.int64) for g, p in sorted(positions.items())}
    sizes = {g: len(p) for g, p in index_sets.items()}
    frequencies = {g: sizes[g] / n for g in index_sets}
    return GroupPartition(index_sets=index_sets, sizes=sizes, frequencies=frequencies)


def validate_cohort(cohort: Cohort) -> list[str]:
    """All invariant violations in ``cohort``; empty list iff valid.

    Violations are data, not failures: callers decide whether to raise.
    """
    violations: list[str] = []
    if len(cohort) == 0:
        violations.append("cohort has no samples")
        return violations
    if len(set(cohort.group_labels)) != len(cohort.group_labels):
        violations.append("group labels are not unique")
    shape = cohort.samples[0].image.shape
    seen_ids: set[int] = set()
    for sample in cohort.samples:
        sid = sample.sample_id
        if sid in seen_ids:
            violations.append(f"duplicate sample_id {sid}")
        seen_ids.add(sid)
        if sample.image.shape != shape:
            violations.append(f"sample {sid}: image shape {sample.image.shape} != cohort shape {shape}")
        if sample.image.shape != sample.mask.shape:
            violations.append(f"sample {sid}: image/mask shape mismatch")
        mask = np.asarray(sample.mask)
        if not np.all((mask == 0) | (mask == 1)):
            violations.append(f"sample {sid}: mask contains values other than 0 and 1")
        img = np.asarray(sample.image)
        if not np.all(np.isfinite(img)) or img.min() < 0.0 or img.max() > 1.0:
            violations.append(f"sample {sid}: image intensities outside [0, 1]")
        if not 0 <= sample.group < cohort.num_groups:
            violations.append(f"sample {sid}: group id {sample.group} out of range")
    return violations


def cohort_to_json(cohort: Cohort) -> str:
    """Serialize a cohort to the canonical JSON document (row-major arrays)."""
    h, w = cohort.grid_shape
    doc = {
        "attribute_name": cohort.attribute_name,
        "group_labels": list(cohort.group_labels),
        "height": h,
        "width": w,
        "samples": [
            {
                "sample_id": s.sample_id,
                "group": s.group,
                "hard_flag": bool(s.hard_flag),
                "image": [float(v) for v in s.image.ravel(order="C")],
                "mask": [int(v) for v in s.mask.ravel(order="C")],
            }
            for s in cohort.samples
        ],
    }
    return json.dumps(doc, separators=(",", ":"))


def cohort_from_json(text: str) -> Cohort:
    doc = json.loads(text)
    h, w = int(doc["height"]), int(doc["width"])
    samples = []
    for rec in doc["samples"]:
        image = np.asarray(rec["image"], dtype=np.float64).reshape(h, w)
        mask = np.asarray(rec["mask"], dtype=np.float64).reshape(h, w)
        samples.append(
            Sample(
                image=image,
                mask=mask,
                group=int(rec["group"]),
                sample_id=int(rec["sample_id"]),
                hard_flag=bool(rec["hard_flag"]),
            )
        )
    return Cohort(
        samples=tuple(samples),
        attribute_name=doc["attribute_name"],
        group_labels=tuple(doc["group_labels"]),
    )
