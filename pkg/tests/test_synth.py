import numpy as np
import pytest

from duetfair.core import build_partition, validate_cohort
from duetfair.synth import SynthConfig, default_benchmark_config, generate_cohort, hard_count


def _small_config(**overrides):
    fields = dict(
        num_groups=2,
        samples_per_group=(6, 10),
        grid_size=8,
        blob_center_shift=((-1.0, -1.0), (1.0, 1.0)),
        blob_radius_range=((1.5, 3.0), (1.5, 3.0)),
        hard_group=1,
        hard_fraction=0.5,
        hard_noise_sigma=0.1,
        hard_contrast=0.5,
        base_noise_sigma=0.05,
        seed=7,
    )
    fields.update(overrides)
    return SynthConfig(**fields)


def test_benchmark_sizes_match_config():
    cohort = generate_cohort(default_benchmark_config())
    part = build_partition(cohort)
    assert [part.sizes[g] for g in part.group_ids] == [26, 227, 425, 43]
    assert validate_cohort(cohort) == []


def test_determinism_bit_identical():
    config = _small_config()
    a = generate_cohort(config)
    b = generate_cohort(config)
    for sa, sb in zip(a.samples, b.samples):
        assert np.array_equal(sa.image, sb.image)
        assert np.array_equal(sa.mask, sb.mask)
        assert sa.hard_flag == sb.hard_flag


def test_hard_fraction_zero():
    cohort = generate_cohort(_small_config(hard_fraction=0.0))
    assert not any(s.hard_flag for s in cohort.samples)


def test_hard_count_and_location():
    config = _small_config()  # round(0.5 * 10) = 5
    cohort = generate_cohort(config)
    flagged = [s for s in cohort.samples if s.hard_flag]
    assert len(flagged) == hard_count(config) == 5
    assert all(s.group == config.hard_group for s in flagged)


def test_hard_count_rounds_half_up():
    config = _small_config(samples_per_group=(6, 5), hard_fraction=0.5)  # 2.5 -> 3
    assert hard_count(config) == 3


def test_mask_is_exact_blob_support():
    # masks must be noise-free: regenerating with zero noise and identical
    # seed yields identical masks and a mask that matches its own ellipse
    noisy = generate_cohort(_small_config())
    clean = generate_cohort(_small_config(base_noise_sigma=0.0, hard_noise_sigma=0.0))
    for a, b in zip(noisy.samples, clean.samples):
        assert np.array_equal(a.mask, b.mask)
    for s in clean.samples:
        if not s.hard_flag:
            # noiseless easy sample: foreground pixels are strictly brighter
            fg = s.image[s.mask == 1.0]
            bg = s.image[s.mask == 0.0]
            if len(fg) and len(bg):
                assert fg.min() > bg.max()


def test_seed_changes_content_not_structure():
    a = generate_cohort(_small_config(seed=1))
    b = generate_cohort(_small_config(seed=2))
    assert [s.group for s in a.samples] == [s.group for s in b.samples]
    assert sum(s.hard_flag for s in a.samples) == sum(s.hard_flag for s in b.samples)
    assert any(not np.array_equal(sa.image, sb.image) for sa, sb in zip(a.samples, b.samples))


def test_intensities_clipped():
    cohort = generate_cohort(_small_config(base_noise_sigma=0.8))
    for s in cohort.samples:
        assert s.image.min() >= 0.0 and s.image.max() <= 1.0


def test_config_validation():
    with pytest.raises(ValueError):
        _small_config(num_groups=1, samples_per_group=(5,), blob_center_shift=((0, 0),), blob_radius_range=((1, 2),))
    with pytest.raises(ValueError):
        _small_config(hard_group=5)
    with pytest.raises(ValueError):
        _small_config(hard_fraction=1.5)
    with pytest.raises(ValueError):
        _small_config(hard_contrast=0.0)
    with pytest.raises(ValueError):
        _small_config(samples_per_group=(0, 16))
