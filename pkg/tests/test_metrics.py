import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from duetfair.metrics import (
    BootstrapConfig,
    SampleMetrics,
    binarize,
    bootstrap_ci,
    build_report,
    dice_iou,
    equity_scaled,
    report_to_csv,
    report_to_json,
    worst_group,
)

masks = st.lists(st.booleans(), min_size=4, max_size=36).map(
    lambda bits: np.asarray(bits, dtype=float).reshape(-1)
)


def test_dice_iou_identical_nonempty():
    m = np.array([[1, 0], [1, 1]], dtype=float)
    assert dice_iou(m, m) == (1.0, 1.0)


def test_dice_iou_disjoint():
    a = np.array([[1, 0], [0, 0]], dtype=float)
    b = np.array([[0, 0], [0, 1]], dtype=float)
    assert dice_iou(a, b) == (0.0, 0.0)


def test_dice_iou_manual_counts():
    # |P|=2, |G|=4, |P & G|=2 -> dice 2/3, iou 1/2
    pred = np.array([[1, 1, 0, 0]], dtype=float)
    true = np.array([[1, 1, 1, 1]], dtype=float)
    d, i = dice_iou(pred, true)
    assert d == pytest.approx(2 / 3, abs=1e-15)
    assert i == pytest.approx(1 / 2, abs=1e-15)


def test_dice_iou_both_empty():
    z = np.zeros((3, 3))
    assert dice_iou(z, z) == (1.0, 1.0)


def test_dice_iou_shape_mismatch():
    with pytest.raises(ValueError):
        dice_iou(np.zeros((2, 2)), np.zeros((2, 3)))


@given(masks, masks)
@settings(max_examples=150, deadline=None)
def test_dice_at_least_iou(a, b):
    n = min(len(a), len(b))
    d, i = dice_iou(a[:n], b[:n])
    assert d >= i - 1e-15
    if d not in (0.0, 1.0):
        assert d > i


def test_equity_scaled_published_rim_row():
    # population 0.816 with subgroup means 0.780/0.782/0.827
    assert equity_scaled(0.816, [0.780, 0.782, 0.827]) == pytest.approx(0.755, abs=5e-4)


def test_equity_scaled_published_stage_row():
    # population 0.665 with subgroup means 0.758/0.620/0.689/0.758
    assert equity_scaled(0.665, [0.758, 0.620, 0.689, 0.758]) == pytest.approx(0.530, abs=5e-4)


def test_equity_scaled_no_disparity():
    assert equity_scaled(0.8, [0.8, 0.8, 0.8]) == pytest.approx(0.8, abs=1e-15)


@given(
    st.floats(min_value=0.0, max_value=1.0),
    st.lists(st.floats(min_value=0.0, max_value=1.0), min_size=1, max_size=6),
)
@settings(max_examples=150, deadline=None)
def test_equity_scaled_bounds(pop, subs):
    es = equity_scaled(pop, subs)
    assert 0.0 <= es <= pop + 1e-15
    if pop > 0 and any(abs(pop - v) > 1e-12 for v in subs):
        assert es < pop


def test_equity_scaled_monotone_in_deviation():
    base = equity_scaled(0.8, [0.8, 0.75])
    wider = equity_scaled(0.8, [0.8, 0.7])
    assert wider < base


def test_worst_group_published_row():
    groups = {0: 0.758, 1: 0.620, 2: 0.689, 3: 0.758}
    assert worst_group(groups) == (1, 0.620)


def test_worst_group_single_and_ties():
    assert worst_group({2: 0.5}) == (2, 0.5)
    assert worst_group({0: 0.4, 1: 0.4, 2: 0.9})[0] == 0


def test_bootstrap_constant_data():
    lo, hi = bootstrap_ci([0.7] * 20, "mean", BootstrapConfig(resamples=200, seed=1))
    assert lo == hi  # zero-width interval
    assert lo == pytest.approx(0.7, abs=1e-12)


def test_bootstrap_single_value():
    ci = bootstrap_ci([0.3], "mean", BootstrapConfig(resamples=100, seed=2))
    assert ci == (0.3, 0.3)


def test_bootstrap_golden_mean_interval():
    values = np.array([0.0] * 50 + [1.0] * 50)
    ci = bootstrap_ci(values, "mean", BootstrapConfig(resamples=1000, level=0.95, seed=7))
    assert ci == (0.41, 0.6)  # reference-run golden, pinned


def test_bootstrap_deterministic():
    values = np.linspace(0, 1, 37)
    config = BootstrapConfig(resamples=500, seed=11)
    assert bootstrap_ci(values, "mean", config) == bootstrap_ci(values, "mean", config)


def test_bootstrap_contains_point_estimate():
    rng = np.random.default_rng(0)
    values = rng.uniform(0, 1, 200)
    lo, hi = bootstrap_ci(values, "mean", BootstrapConfig(resamples=1000, seed=5))
    assert lo <= values.mean() <= hi


def test_bootstrap_es_recomputes_groups():
    values = np.array([0.9] * 10 + [0.5] * 10)
    groups = np.array([0] * 10 + [1] * 10)
    lo, hi = bootstrap_ci(values, "es", BootstrapConfig(resamples=400, seed=9), groups=groups)
    point = equity_scaled(0.7, [0.9, 0.5])
    assert lo <= point <= hi
    assert hi < 0.7  # disparity always shrinks the metric here


def test_bootstrap_es_requires_groups():
    with pytest.raises(ValueError, match="groups"):
        bootstrap_ci([0.1, 0.2], "es", BootstrapConfig(resamples=10, seed=0))


def test_bootstrap_unknown_statistic():
    with pytest.raises(ValueError, match="statistic"):
        bootstrap_ci([0.1], "median", BootstrapConfig(resamples=10, seed=0))


def _rows():
    return [
        SampleMetrics(sample_id=0, group=0, hard_flag=False, dice=1.0, iou=1.0, loss=0.1),
        SampleMetrics(sample_id=1, group=0, hard_flag=True, dice=0.5, iou=0.4, loss=0.6),
        SampleMetrics(sample_id=2, group=1, hard_flag=False, dice=0.8, iou=0.7, loss=0.2),
    ]


def test_build_report_aggregates():
    report = build_report(_rows(), group_labels=("a", "b"))
    assert report.per_group[0].mean_dice == pytest.approx(0.75)
    assert report.per_group[1].n == 1
    assert report.population[0] == pytest.approx((1.0 + 0.5 + 0.8) / 3)
    assert report.worst_group[0] == 0
    assert report.by_hard_flag["hard"].n == 1
    expected_es = equity_scaled(report.population[0], [0.75, 0.8])
    assert report.es[0] == pytest.approx(expected_es, abs=1e-15)


def test_report_json_and_csv_shape():
    import json

    report = build_report(_rows(), group_labels=("a", "b"), bootstrap=BootstrapConfig(resamples=50, seed=3))
    doc = json.loads(report_to_json(report))
    assert set(doc) == {"per_sample", "per_group", "population", "es", "worst_group", "by_hard_flag", "cis"}
    assert set(doc["cis"]) == {"mean_dice", "es_dice"}
    csv = report_to_csv(report)
    lines = csv.strip().split("\n")
    assert lines[0] == "sample_id,group,hard_flag,dice,iou,loss"
    assert len(lines) == 4
    assert lines[1].startswith("0,0,0,")


def test_binarize_threshold():
    pred = np.array([[0.49, 0.5], [0.51, 0.1]])
    assert np.array_equal(binarize(pred), np.array([[0.0, 1.0], [1.0, 0.0]]))
