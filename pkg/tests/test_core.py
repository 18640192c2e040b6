import inspect

import numpy as np
import pytest

import duetfair.model
import duetfair.objectives
import duetfair.robust
from duetfair.core import (
    Cohort,
    Sample,
    build_partition,
    cohort_from_json,
    cohort_to_json,
    validate_cohort,
)


def _sample(sid, group, h=4, w=4, mask_value=1.0, hard=False):
    image = np.full((h, w), 0.5)
    mask = np.full((h, w), mask_value)
    return Sample(image=image, mask=mask, group=group, sample_id=sid, hard_flag=hard)


def _cohort(groups, labels=("a", "b")):
    samples = tuple(_sample(i, g) for i, g in enumerate(groups))
    return Cohort(samples=samples, attribute_name="attr", group_labels=labels)


def test_partition_two_groups():
    part = build_partition(_cohort([0, 0, 1, 1]))
    assert part.index_sets[0].tolist() == [0, 1]
    assert part.index_sets[1].tolist() == [2, 3]
    assert part.frequencies == {0: 0.5, 1: 0.5}


def test_partition_single_group():
    part = build_partition(_cohort([0, 0, 0], labels=("only",)))
    assert part.index_sets[0].tolist() == [0, 1, 2]
    assert part.frequencies == {0: 1.0}


def test_partition_group_out_of_range():
    cohort = _cohort([0, 5])
    with pytest.raises(ValueError, match="sample 1"):
        build_partition(cohort)


def test_partition_empty_cohort():
    cohort = Cohort(samples=(), attribute_name="attr", group_labels=("a",))
    with pytest.raises(ValueError, match="empty cohort"):
        build_partition(cohort)


def test_partition_covers_all_positions():
    cohort = _cohort([1, 0, 1, 0, 1])
    part = build_partition(cohort)
    joined = np.concatenate([part.index_sets[g] for g in part.group_ids])
    assert sorted(joined.tolist()) == list(range(5))
    assert abs(sum(part.frequencies.values()) - 1.0) < 1e-12


def test_partition_deterministic():
    a = build_partition(_cohort([0, 1, 0, 1]))
    b = build_partition(_cohort([0, 1, 0, 1]))
    assert all(np.array_equal(a.index_sets[g], b.index_sets[g]) for g in a.group_ids)


def test_validate_ok():
    assert validate_cohort(_cohort([0, 1])) == []


def test_validate_nonbinary_mask():
    bad = _sample(1, 0, mask_value=0.5)
    cohort = Cohort(samples=(_sample(0, 0), bad), attribute_name="attr", group_labels=("a",))
    violations = validate_cohort(cohort)
    assert len(violations) == 1
    assert "sample 1" in violations[0] and "mask" in violations[0]


def test_validate_duplicate_id():
    cohort = Cohort(
        samples=(_sample(3, 0), _sample(3, 0)),
        attribute_name="attr",
        group_labels=("a",),
    )
    violations = validate_cohort(cohort)
    assert any("duplicate sample_id 3" in v for v in violations)


def test_validate_intensity_range():
    s = Sample(image=np.full((2, 2), 1.5), mask=np.ones((2, 2)), group=0, sample_id=0)
    cohort = Cohort(samples=(s,), attribute_name="attr", group_labels=("a",))
    assert any("intensities" in v for v in validate_cohort(cohort))


def test_sample_shape_mismatch_rejected():
    with pytest.raises(ValueError, match="shape"):
        Sample(image=np.zeros((2, 3)), mask=np.zeros((3, 2)), group=0, sample_id=0)


def test_cohort_json_roundtrip():
    rng = np.random.default_rng(0)
    samples = tuple(
        Sample(
            image=rng.uniform(0, 1, (3, 3)),
            mask=(rng.uniform(0, 1, (3, 3)) > 0.5).astype(float),
            group=i % 2,
            sample_id=i,
            hard_flag=bool(i == 1),
        )
        for i in range(4)
    )
    cohort = Cohort(samples=samples, attribute_name="stage", group_labels=("x", "y"))
    text = cohort_to_json(cohort)
    back = cohort_from_json(text)
    assert back.attribute_name == "stage"
    assert back.group_labels == ("x", "y")
    for a, b in zip(cohort.samples, back.samples):
        assert np.array_equal(a.image, b.image)  # exact float round-trip
        assert np.array_equal(a.mask, b.mask)
        assert (a.group, a.sample_id, a.hard_flag) == (b.group, b.sample_id, b.hard_flag)


def test_cohort_json_field_names():
    import json

    cohort = _cohort([0, 1])
    doc = json.loads(cohort_to_json(cohort))
    assert set(doc) == {"attribute_name", "group_labels", "height", "width", "samples"}
    assert set(doc["samples"][0]) == {"sample_id", "group", "hard_flag", "image", "mask"}
    assert doc["height"] == 4 and doc["width"] == 4
    assert len(doc["samples"][0]["image"]) == 16  # row-major flat


def test_hard_flag_never_read_by_model_or_objective_code():
    # hard_flag is an evaluation-side stratification marker only
    for module in (duetfair.model, duetfair.robust, duetfair.objectives):
        assert "hard_flag" not in inspect.getsource(module)
    # the trainer may mention it only through evaluation plumbing
    import duetfair.trainer as trainer

    train_src = inspect.getsource(trainer.train)
    assert "hard_flag" not in train_src
