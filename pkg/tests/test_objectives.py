import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from duetfair.core import Cohort, GroupPartition, LossVector, Sample, build_partition
from duetfair.model import ModelConfig, init_params, loss_and_grad
from duetfair.objectives import (
    AggregationWeights,
    ObjectiveConfig,
    TwoLevelWeights,
    Variant,
    aggregate_objective,
    composite_sample_weights,
    objective_gradient,
    subgroup_risks,
)
from duetfair.robust import RobustnessConfig, solve_robust_risk
from duetfair.rng import PortableRng


def _partition(groups):
    samples = tuple(
        Sample(image=np.zeros((2, 2)), mask=np.zeros((2, 2)), group=g, sample_id=i)
        for i, g in enumerate(groups)
    )
    labels = tuple(f"g{i}" for i in range(max(groups) + 1))
    return build_partition(Cohort(samples=samples, attribute_name="a", group_labels=labels))


def _config(variant, rho=0.0, group_ids=(0, 1), lambda_rob=1.0, aggregation=None):
    return ObjectiveConfig(
        variant=variant,
        robustness=RobustnessConfig.from_scalar(rho, group_ids),
        lambda_rob=lambda_rob,
        aggregation=aggregation,
    )


def test_subgroup_risks_means():
    part = _partition([0, 0, 1])
    risks = subgroup_risks(LossVector(values=np.array([0.2, 0.4, 0.6])), part)
    assert risks[0] == pytest.approx(0.3, abs=1e-15)
    assert risks[1] == pytest.approx(0.6, abs=1e-15)


def test_subgroup_risks_single_group_and_zeros():
    part = _partition([0, 0, 0])
    risks = subgroup_risks(LossVector(values=np.zeros(3)), part)
    assert risks == {0: 0.0}


def test_erm_value_and_weights():
    part = _partition([0, 0, 1, 1])
    losses = LossVector(values=np.array([0.1, 0.3, 0.5, 0.7]))
    ev = aggregate_objective(losses, part, _config(Variant.ERM))
    assert ev.value == pytest.approx(0.4, abs=1e-15)
    assert np.allclose(ev.per_sample_weights, 0.25)


def test_fairdro_rho_zero_frequency_weights_is_erm():
    part = _partition([0, 0, 0, 1])
    losses = LossVector(values=np.array([0.1, 0.2, 0.3, 0.9]))
    agg = AggregationWeights.frequencies(part)
    ev = aggregate_objective(losses, part, _config(Variant.FAIRDRO, rho=0.0, aggregation=agg))
    erm = aggregate_objective(losses, part, _config(Variant.ERM))
    assert ev.value == pytest.approx(erm.value, abs=1e-12)
    assert np.allclose(ev.per_sample_weights, erm.per_sample_weights, atol=1e-12)


def test_fairdro_composed_from_robust_solutions():
    # two groups, losses [0.2, 0.8] / [0.5], rho = 0.1, uniform weights
    part = _partition([0, 0, 1])
    losses = LossVector(values=np.array([0.2, 0.8, 0.5]))
    ev = aggregate_objective(losses, part, _config(Variant.FAIRDRO, rho=0.1))
    expected = 0.5 * solve_robust_risk(np.array([0.2, 0.8]), 0.1).value + 0.5 * 0.5
    assert ev.value == pytest.approx(expected, abs=1e-12)
    assert ev.value == pytest.approx(0.566, abs=5e-4)
    assert ev.per_sample_weights.sum() == pytest.approx(1.0, abs=1e-10)


def test_groupdro_max_and_weights():
    part = _partition([0, 0, 1])
    losses = LossVector(values=np.array([0.3, 0.3, 0.6]))
    ev = aggregate_objective(losses, part, _config(Variant.GROUPDRO))
    assert ev.value == pytest.approx(0.6, abs=1e-15)
    assert np.allclose(ev.per_sample_weights, [0.0, 0.0, 1.0])


def test_groupdro_tie_breaks_to_lowest_id():
    part = _partition([0, 1])
    losses = LossVector(values=np.array([0.5, 0.5]))
    ev = aggregate_objective(losses, part, _config(Variant.GROUPDRO))
    assert np.allclose(ev.per_sample_weights, [1.0, 0.0])


def test_penalty_lambda_zero_is_erm():
    part = _partition([0, 1, 1])
    losses = LossVector(values=np.array([0.4, 0.1, 0.7]))
    ev = aggregate_objective(losses, part, _config(Variant.FAIRDRO_PENALTY, rho=0.3, lambda_rob=0.0))
    assert ev.value == pytest.approx(losses.values.mean(), abs=1e-15)
    assert np.allclose(ev.per_sample_weights, 1 / 3)


def test_penalty_adds_worst_robust_group():
    part = _partition([0, 0, 1, 1])
    values = np.array([0.1, 0.2, 0.5, 0.9])
    losses = LossVector(values=values)
    rho = 0.2
    ev = aggregate_objective(losses, part, _config(Variant.FAIRDRO_PENALTY, rho=rho, lambda_rob=2.0))
    sol1 = solve_robust_risk(values[2:], rho)
    assert ev.value == pytest.approx(values.mean() + 2.0 * sol1.value, abs=1e-12)
    expected_c = np.full(4, 0.25)
    expected_c[2:] += 2.0 * sol1.weights
    assert np.allclose(ev.per_sample_weights, expected_c, atol=1e-12)


def test_fairdro_monotone_in_rho():
    part = _partition([0, 0, 0, 1, 1])
    losses = LossVector(values=np.array([0.1, 0.5, 0.9, 0.2, 0.8]))
    values = [
        aggregate_objective(losses, part, _config(Variant.FAIRDRO, rho=r)).value
        for r in (0.0, 0.1, 0.3, 0.6, 1.2)
    ]
    assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))


def test_groupdro_dominates_erm():
    rng = PortableRng(1)
    for _ in range(20):
        losses = LossVector(values=rng.uniform(6))
        part = _partition([0, 0, 1, 1, 2, 2])
        gd = aggregate_objective(losses, part, _config(Variant.GROUPDRO, group_ids=(0, 1, 2)))
        erm = aggregate_objective(losses, part, _config(Variant.ERM, group_ids=(0, 1, 2)))
        assert gd.value >= erm.value - 1e-12


def test_unknown_variant_rejected():
    part = _partition([0, 1])
    losses = LossVector(values=np.array([0.1, 0.2]))
    config = _config(Variant.ERM)
    object.__setattr__(config, "variant", "bogus")
    with pytest.raises(ValueError, match="unknown objective variant"):
        aggregate_objective(losses, part, config)


# --- composite weights and the two-level collapse -------------------------


def test_composite_uniform():
    part = _partition([0, 0, 1, 1])
    tl = TwoLevelWeights(alpha={0: 0.5, 1: 0.5}, beta={0: np.array([0.5, 0.5]), 1: np.array([0.5, 0.5])})
    c = composite_sample_weights(tl, part)
    assert np.allclose(c, 0.25)


def test_composite_concentrated_alpha():
    part = _partition([0, 0, 1])
    tl = TwoLevelWeights(alpha={0: 1.0, 1: 0.0}, beta={0: np.array([0.3, 0.7]), 1: np.array([1.0])})
    c = composite_sample_weights(tl, part)
    assert np.allclose(c, [0.3, 0.7, 0.0])


def test_composite_products():
    part = _partition([0, 0, 1])
    tl = TwoLevelWeights(alpha={0: 0.6, 1: 0.4}, beta={0: np.array([0.5, 0.5]), 1: np.array([1.0])})
    c = composite_sample_weights(tl, part)
    assert np.allclose(c, [0.3, 0.3, 0.4], atol=1e-15)


def test_composite_rejects_bad_simplex():
    with pytest.raises(ValueError):
        TwoLevelWeights(alpha={0: 0.7, 1: 0.7}, beta={0: np.array([1.0]), 1: np.array([1.0])})
    with pytest.raises(ValueError):
        TwoLevelWeights(alpha={0: 1.0}, beta={0: np.array([0.9, 0.3])})


@given(st.data())
@settings(max_examples=40, deadline=None)
def test_two_level_collapse_identity(data):
    # objective through (alpha, beta) equals objective through collapsed c
    sizes = data.draw(st.lists(st.integers(min_value=1, max_value=5), min_size=1, max_size=4))
    groups = [g for g, size in enumerate(sizes) for _ in range(size)]
    part = _partition(groups)
    n = len(groups)
    raw_alpha = np.asarray(data.draw(st.lists(
        st.floats(min_value=0.01, max_value=1.0), min_size=len(sizes), max_size=len(sizes))))
    alpha = raw_alpha / raw_alpha.sum()
    beta = {}
    for g, size in enumerate(sizes):
        raw = np.asarray(data.draw(st.lists(
            st.floats(min_value=0.01, max_value=1.0), min_size=size, max_size=size)))
        beta[g] = raw / raw.sum()
    losses = np.asarray(data.draw(st.lists(
        st.floats(min_value=0.0, max_value=2.0), min_size=n, max_size=n)))

    tl = TwoLevelWeights(alpha={g: float(a) for g, a in enumerate(alpha)}, beta=beta)
    c = composite_sample_weights(tl, part)
    assert c.sum() == pytest.approx(1.0, abs=1e-12)
    two_level_value = sum(
        alpha[g] * float(beta[g] @ losses[part.index_sets[g]]) for g in range(len(sizes))
    )
    assert two_level_value == pytest.approx(float(c @ losses), abs=1e-12)


def test_two_level_collapse_gradient_identity():
    config = ModelConfig(feature_dim=3, num_experts=3, top_k=2, num_groups=2, height=5, width=5)
    params = init_params(config, 3)
    rng = PortableRng(4)
    samples = [
        Sample(
            image=rng.uniform(25).reshape(5, 5),
            mask=(rng.uniform(25).reshape(5, 5) > 0.5).astype(float),
            group=i % 2,
            sample_id=i,
        )
        for i in range(6)
    ]
    cohort = Cohort(samples=tuple(samples), attribute_name="a", group_labels=("x", "y"))
    part = build_partition(cohort)
    _, grads = loss_and_grad(samples, params, config)
    tl = TwoLevelWeights(
        alpha={0: 0.7, 1: 0.3},
        beta={0: np.array([0.2, 0.3, 0.5]), 1: np.array([0.6, 0.3, 0.1])},
    )
    c = composite_sample_weights(tl, part)
    collapsed = grads.combine(c)
    direct = np.zeros(params.size)
    for g in (0, 1):
        for b_i, row in zip(tl.beta[g], part.index_sets[g]):
            direct += tl.alpha[g] * b_i * grads.per_sample(int(row))
    assert np.allclose(collapsed, direct, atol=1e-10)


def test_objective_gradient_batch_mismatch():
    part = _partition([0, 1])
    losses = LossVector(values=np.array([0.1, 0.2]))
    ev = aggregate_objective(losses, part, _config(Variant.ERM), sample_ids=np.array([0, 1]))
    config = ModelConfig(feature_dim=2, num_experts=2, top_k=1, num_groups=2, height=3, width=3)
    params = init_params(config, 0)
    rng = PortableRng(5)
    samples = [
        Sample(image=rng.uniform(9).reshape(3, 3), mask=np.zeros((3, 3)), group=i, sample_id=i + 7)
        for i in range(2)
    ]
    _, grads = loss_and_grad(samples, params, config)
    with pytest.raises(ValueError, match="different batches"):
        objective_gradient(ev, grads)


def test_objective_gradient_single_sample():
    config = ModelConfig(feature_dim=2, num_experts=2, top_k=1, num_groups=1, height=3, width=3)
    params = init_params(config, 1)
    rng = PortableRng(6)
    sample = Sample(image=rng.uniform(9).reshape(3, 3), mask=np.ones((3, 3)), group=0, sample_id=0)
    lv, grads = loss_and_grad([sample], params, config)
    part = _partition([0])
    ev = aggregate_objective(lv, part, _config(Variant.ERM, group_ids=(0,)), sample_ids=grads.sample_ids)
    grad = objective_gradient(ev, grads)
    assert np.allclose(grad, grads.per_sample(0) * ev.per_sample_weights[0], atol=1e-12)


def test_fairdro_danskin_finite_difference():
    from duetfair.verification import objective_gradient_check

    result = objective_gradient_check()
    assert result["num_points"] == 3
    assert result["worst_rel_error"] <= 1e-4
    assert result["passed"]
