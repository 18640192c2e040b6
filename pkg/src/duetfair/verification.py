"""Verification sweeps pitting the production solver against its oracles.

``oracle_sweep`` solves 200 random small instances by both the dual
route and the brute-force primal route and demands agreement to 1e-6.
``gradient_check_suite`` compares the analytic gradients of the model
loss and of the robust aggregate objective against central finite
differences. Both return plain dicts ready for JSON serialization; a
failing instance is included verbatim so it can be replayed.
"""

from __future__ import annotations

import numpy as np

from .core import Sample, build_partition
from .model import ModelConfig, ModelParams, init_params, loss_and_grad
from .objectives import ObjectiveConfig, Variant, aggregate_objective, objective_gradient
from .robust import RobustnessConfig, brute_force_primal, solve_robust_risk
from .rng import PortableRng, substream
from .synth import SynthConfig, generate_cohort

SWEEP_INSTANCES = 200
SWEEP_SIZES = (2, 3, 4, 5, 6)
SWEEP_RHOS = (0.01, 0.05, 0.1, 0.3, 0.7)
SWEEP_TOL = 1e-6
SWEEP_SEED = 20240 + 7

FD_STEP = 1e-5
FD_TOL = 1e-4
FD_COORDS = 20
FD_SEED = 424242


def oracle_sweep(num_instances: int = SWEEP_INSTANCES, seed: int = SWEEP_SEED) -> dict:
    """Dual solver vs brute-force primal on random loss vectors."""
    rng = PortableRng(seed)
    failures = []
    worst = 0.0
    for i in range(num_instances):
        n = SWEEP_SIZES[i % len(SWEEP_SIZES)]
        rho = SWEEP_RHOS[(i // len(SWEEP_SIZES)) % len(SWEEP_RHOS)]
        losses = rng.uniform(n)
        dual = solve_robust_risk(losses, rho).value
        primal, _ = brute_force_primal(losses, rho)
        gap = abs(dual - primal)
        worst = max(worst, gap)
        if gap > SWEEP_TOL:
            failures.append(
                {"instance": i, "n": n, "rho": rho, "losses": losses.tolist(),
                 "dual": dual, "primal": primal, "gap": gap}
            )
    return {
        "num_instances": num_instances,
        "num_passed": num_instances - len(failures),
        "worst_gap": worst,
        "tolerance": SWEEP_TOL,
        "passed": not failures,
        "failures": failures,
    }


def _fd_cohort(seed: int):
    """Small two-blob cohort: 3 groups x 8 samples on an 8x8 grid."""
    config = SynthConfig(
        num_groups=3,
        samples_per_group=(8, 8, 8),
        grid_size=8,
        blob_center_shift=((-1.0, -1.0), (0.0, 1.0), (1.0, 0.0)),
        blob_radius_range=((1.5, 3.0),) * 3,
        hard_group=0,
        hard_fraction=0.0,
        hard_noise_sigma=0.0,
        hard_contrast=1.0,
        base_noise_sigma=0.08,
        seed=seed,
        group_labels=("A", "B", "C"),
    )
    return generate_cohort(config)


def _perturbed_params(config: ModelConfig, seed: int, scale: float = 0.3) -> ModelParams:
    """Seeded params pushed away from the zero-expert init so every block
    (experts and gates included) sits at a generic interior point."""
    params = init_params(config, seed)
    noise = substream(seed, 0xFD).uniform(params.size) * 2.0 - 1.0
    return ModelParams(flat=params.flat + scale * noise, layout=params.layout)


def model_gradient_check(seed: int = FD_SEED, num_coords: int = FD_COORDS) -> dict:
    """Central differences of the weighted batch loss vs analytic gradients.

    Coordinates whose perturbation flips a top-K selection are skipped
    and resampled: the selection kink is a subgradient point where finite
    differences measure a different one-sided object.
    """
    cohort = _fd_cohort(seed)
    mconfig = ModelConfig(num_groups=3, height=8, width=8)
    params = _perturbed_params(mconfig, seed)
    batch = list(cohort.samples[:10])
    weights = substream(seed, 1).uniform(len(batch)) + 0.5

    losses, grads = loss_and_grad(batch, params, mconfig)
    analytic = grads.combine(weights)

    def value(flat: np.ndarray) -> float:
        lv, _ = loss_and_grad(batch, ModelParams(flat=flat, layout=params.layout), mconfig)
        return float(weights @ lv.values)

    from .model import _forward_cached  # selection probe

    images = np.stack([s.image for s in batch])
    groups = np.asarray([s.group for s in batch])

    def selection(flat: np.ndarray) -> np.ndarray:
        cache = _forward_cached(images, groups, ModelParams(flat=flat, layout=params.layout), mconfig)
        return cache["sel"]

    coord_rng = substream(seed, 2)
    checked = []
    worst = 0.0
    tried = 0
    while len(checked) < num_coords and tried < 20 * num_coords:
        c = int(coord_rng.integers(1, params.size)[0])
        tried += 1
        plus = params.flat.copy()
        minus = params.flat.copy()
        plus[c] += FD_STEP
        minus[c] -= FD_STEP
        if not np.array_equal(selection(plus), selection(minus)):
            continue
        fd = (value(plus) - value(minus)) / (2.0 * FD_STEP)
        an = float(analytic[c])
        denom = max(abs(fd), abs(an))
        rel = 0.0 if denom < 1e-8 else abs(fd - an) / denom
        worst = max(worst, rel)
        checked.append({"coord": c, "fd": fd, "analytic": an, "rel_error": rel})
    passed = len(checked) == num_coords and worst <= FD_TOL
    return {"kind": "model-loss", "worst_rel_error": worst, "tolerance": FD_TOL,
            "num_checked": len(checked), "passed": passed, "coords": checked}


def objective_gradient_check(
    seed: int = FD_SEED,
    num_points: int = 3,
    num_coords: int = FD_COORDS,
    rho: float = 0.3,
) -> dict:
    """Central differences of the robust aggregate objective vs the
    fixed-worst-case-weights gradient, at random interior points."""
    cohort = _fd_cohort(seed + 1)
    partition = build_partition(cohort)
    mconfig = ModelConfig(num_groups=3, height=8, width=8)
    oconfig = ObjectiveConfig(
        variant=Variant.FAIRDRO,
        robustness=RobustnessConfig.from_scalar(rho, partition.group_ids),
    )
    batch = list(cohort.samples)

    def objective_value(params: ModelParams) -> float:
        lv, _ = loss_and_grad(batch, params, mconfig)
        return aggregate_objective(lv, partition, oconfig).value

    results = []
    worst_overall = 0.0
    for point in range(num_points):
        params = _perturbed_params(mconfig, seed + 10 * point + 3)
        lv, grads = loss_and_grad(batch, params, mconfig)
        evaluation = aggregate_objective(lv, partition, oconfig, sample_ids=grads.sample_ids)
        # interior check: every group's optimal eta must be off the boundary
        if not all(isinstance(sol.eta_star, float) for _, sol in evaluation.per_group.values() if sol):
            continue
        analytic = objective_gradient(evaluation, grads)
        coord_rng = substream(seed, 100 + point)
        worst = 0.0
        for _ in range(num_coords):
            c = int(coord_rng.integers(1, params.size)[0])
            plus = params.flat.copy()
            minus = params.flat.copy()
            plus[c] += FD_STEP
            minus[c] -= FD_STEP
            fd = (
                objective_value(ModelParams(flat=plus, layout=params.layout))
                - objective_value(ModelParams(flat=minus, layout=params.layout))
            ) / (2.0 * FD_STEP)
            an = float(analytic[c])
            denom = max(abs(fd), abs(an))
            rel = 0.0 if denom < 1e-8 else abs(fd - an) / denom
            worst = max(worst, rel)
        results.append({"point": point, "worst_rel_error": worst})
        worst_overall = max(worst_overall, worst)
    passed = len(results) == num_points and worst_overall <= FD_TOL
    return {"kind": "robust-objective", "worst_rel_error": worst_overall, "tolerance": FD_TOL,
            "num_points": len(results), "passed": passed, "points": results}


def gradient_check_suite(seed: int = FD_SEED) -> dict:
    model_check = model_gradient_check(seed)
    objective_check = objective_gradient_check(seed)
    return {
        "model": model_check,
        "objective": objective_check,
        "passed": model_check["passed"] and objective_check["passed"],
    }
