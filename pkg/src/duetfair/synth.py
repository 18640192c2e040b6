"""Synthetic segmentation cohorts with planted intra-group hard cases.

Each sample is an axis-aligned elliptical bright blob on a dark
background; the mask is the exact noiseless blob support. Groups differ
by a per-group shift of the blob center distribution and a per-group
radius range (the inter-group axis). Inside one designated group, a
seeded fraction of samples is made "hard": foreground contrast is
scaled down and extra Gaussian noise added (the intra-group axis). The
hard cases are invisible to the model except through their pixels.

Generation is a pure function of the config: every sample draws from
its own ``(seed, sample_id)`` substream, so parallel generation in any
order yields bit-identical cohorts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import Cohort, GroupId, Sample
from .rng import substream

# stream id offset separating the hard-subset draw from per-sample streams
_HARD_PICK_STREAM = 0x7FFFFFFF00000000

_FOREGROUND_LEVEL = 0.85
_BACKGROUND_LEVEL = 0.10


@dataclass(frozen=True)
class SynthConfig:
    num_groups: int
    samples_per_group: tuple[int, ...]
    grid_size: int
    blob_center_shift: tuple[tuple[float, float], ...]  # per-group (dy, dx) pixels
    blob_radius_range: tuple[tuple[float, float], ...]  # per-group (min, max) pixels
    hard_group: GroupId
    hard_fraction: float
    hard_noise_sigma: float
    hard_contrast: float
    base_noise_sigma: float
    seed: int
    center_jitter: float = 1.5  # uniform half-width of per-sample center wobble
    group_labels: tuple[str, ...] = ()
    attribute_name: str = "stage"

    def __post_init__(self):
        object.__setattr__(self, "samples_per_group", tuple(int(v) for v in self.samples_per_group))
        object.__setattr__(self, "blob_center_shift", tuple((float(a), float(b)) for a, b in self.blob_center_shift))
        object.__setattr__(self, "blob_radius_range", tuple((float(a), float(b)) for a, b in self.blob_radius_range))
        if self.num_groups < 2:
            raise ValueError("num_groups must be at least 2")
        if len(self.samples_per_group) != self.num_groups:
            raise ValueError("samples_per_group length must equal num_groups")
        if any(n <= 0 for n in self.samples_per_group):
            raise ValueError("every group needs at least one sample")
        if len(self.blob_center_shift) != self.num_groups or len(self.blob_radius_range) != self.num_groups:
            raise ValueError("per-group blob settings must match num_groups")
        if not 0 <= self.hard_group < self.num_groups:
            raise ValueError(f"hard_group {self.hard_group} out of range")
        if not 0.0 <= self.hard_fraction <= 1.0:
            raise ValueError("hard_fraction must lie in [0, 1]")
        if self.hard_noise_sigma < 0 or self.base_noise_sigma < 0:
            raise ValueError("noise sigmas must be non-negative")
        if not 0.0 < self.hard_contrast <= 1.0:
            raise ValueError("hard_contrast must lie in (0, 1]")
        if not self.group_labels:
            object.__setattr__(self, "group_labels", tuple(f"G{i}" for i in range(self.num_groups)))
        elif len(self.group_labels) != self.num_groups:
            raise ValueError("group_labels length must equal num_groups")


def default_benchmark_config(seed: int = 2024, scale: float = 1.0) -> SynthConfig:
    """The benchmark cohort: 4 groups with sizes mirroring a heavily
    imbalanced tumor-stage distribution (4/31/59/6 percent), hard cases
    planted inside the majority group where averaging hides them."""
    sizes = tuple(max(1, round(n * scale)) for n in (26, 227, 425, 43))
    return SynthConfig(
        num_groups=4,
        samples_per_group=sizes,
        grid_size=16,
        blob_center_shift=((-2.5, -2.5), (-2.5, 2.5), (2.5, -2.5), (2.5, 2.5)),
        blob_radius_range=((2.0, 3.5), (2.5, 4.5), (3.0, 5.0), (2.0, 4.0)),
        hard_group=2,
        hard_fraction=0.3,
        hard_noise_sigma=0.15,
        hard_contrast=0.4,
        base_noise_sigma=0.05,
        seed=seed,
        group_labels=("T1", "T2", "T3", "T4"),
        attribute_name="t_stage",
    )


def hard_count(config: SynthConfig) -> int:
    """round(hard_fraction * n_hard_group) with half-up rounding."""
    return int(math.floor(config.hard_fraction * config.samples_per_group[config.hard_group] + 0.5))


def _render_sample(config: SynthConfig, sample_id: int, group: GroupId, hard: bool) -> Sample:
    rng = substream(config.seed, sample_id)
    size = config.grid_size
    dy, dx = config.blob_center_shift[group]
    rmin, rmax = config.blob_radius_range[group]

    jitter = (rng.uniform(2) * 2.0 - 1.0) * config.center_jitter
    cy = (size - 1) / 2.0 + dy + jitter[0]
    cx = (size - 1) / 2.0 + dx + jitter[1]
    radii = rmin + rng.uniform(2) * (rmax - rmin)
    ry, rx = radii[0], radii[1]

    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    inside = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    mask = inside.astype(np.float64)

    contrast = config.hard_contrast if hard else 1.0
    fg = _BACKGROUND_LEVEL + (_FOREGROUND_LEVEL - _BACKGROUND_LEVEL) * contrast
    image = np.where(inside, fg, _BACKGROUND_LEVEL)
    if config.base_noise_sigma > 0:
        image = image + config.base_noise_sigma * rng.normal(size * size).reshape(size, size)
    if hard and config.hard_noise_sigma > 0:
        image = image + config.hard_noise_sigma * rng.normal(size * size).reshape(size, size)
    image = np.clip(image, 0.0, 1.0)
    return Sample(image=image, mask=mask, group=group, sample_id=sample_id, hard_flag=hard)


def generate_cohort(config: SynthConfig) -> Cohort:
    """Deterministic cohort for ``config``; see module docstring."""
    group_of: list[GroupId] = []
    for g, count in enumerate(config.samples_per_group):
        group_of.extend([g] * count)

    hard_positions: set[int] = set()
    k = hard_count(config)
    if k > 0:
        offset = sum(config.samples_per_group[: config.hard_group])
        pick_rng = substream(config.seed, _HARD_PICK_STREAM)
        picks = pick_rng.choice_without_replacement(config.samples_per_group[config.hard_group], k)
        hard_positions = {offset + int(p) for p in picks}

    samples = tuple(
        _render_sample(config, sid, g, sid in hard_positions) for sid, g in enumerate(group_of)
    )
    return Cohort(samples=samples, attribute_name=config.attribute_name, group_labels=config.group_labels)
