"""Worst-case within-subgroup risk over a KL ball.

Given per-sample losses for one subgroup, the robust risk is the
maximum reweighted mean over weight vectors q in the probability
simplex with sum_i q_i * log(n * q_i) <= rho. Two independent routes
are provided:

* ``solve_robust_risk`` - the production path: analytic handling of the
  rho = 0 and point-mass regimes, otherwise a one-dimensional convex
  dual minimized by golden-section search, with worst-case weights
  recovered by exponential tilting.
* ``brute_force_primal`` - a direct search over the simplex (coarse
  grid, two local refinements, projection onto the KL boundary) used
  purely as an oracle at small n. It never consults the dual.

All functions are pure; subgroups may be solved concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

# eta -> 0 limit: the optimum is a (uniform) point mass on the maximal losses
ETA_BOUNDARY = "boundary"
# rho = 0: the KL ball is the single uniform distribution (eta -> inf limit)
ETA_INFINITE = "infinite"

_SIMPLEX_TOL = 1e-10
_MAX_TIE_TOL = 1e-12  # absolute tolerance for loss ties at the maximum
_ETA_REL_TOL = 1e-10
_BRACKET_LO = 1e-6  # times loss spread
_BRACKET_HI = 1e3  # times loss spread
_SWEEP_POINTS = 32
_SWEEP_SLACK = 1e-9
_DENSE_SWEEP_POINTS = 4096
_DUAL_GAP_LIMIT = 1e-8

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0

_ORACLE_MAX_N = 6
_COARSE_STEP = 0.02
_REFINE_STEPS = (0.002, 0.0002)
_BOOST_TOP = 16
_MAX_PASSES = 80
# lattice radius (in step units) for the local refinements, by n
_REFINE_RADIUS = {2: 20, 3: 8, 4: 5, 5: 3, 6: 2}


@dataclass(frozen=True)
class RobustnessConfig:
    """Per-group robustness radii; a scalar populates every group."""

    rho: dict[int, float]

    def __post_init__(self):
        for g, r in self.rho.items():
            if not (math.isfinite(r) and r >= 0.0):
                raise ValueError(f"rho for group {g} must be finite and >= 0, got {r}")

    @classmethod
    def from_scalar(cls, rho: float, group_ids) -> "RobustnessConfig":
        return cls(rho={int(g): float(rho) for g in group_ids})

    def rho_for(self, group: int) -> float:
        return self.rho[group]


DEFAULT_RHO = 0.3


@dataclass(frozen=True)
class RobustRiskSolution:
    value: float
    eta_star: Union[float, str]
    weights: np.ndarray
    dual_gap_bound: float


def kl_divergence(q: np.ndarray, n: int) -> float:
    """sum_i q_i * log(n * q_i) with 0 log 0 := 0; errors off the simplex."""
    q = np.asarray(q, dtype=np.float64)
    if len(q) != n:
        raise ValueError(f"weight vector has length {len(q)}, expected {n}")
    if np.any(q < -_SIMPLEX_TOL) or abs(float(q.sum()) - 1.0) > _SIMPLEX_TOL:
        raise ValueError("weights are not on the probability simplex")
    return float(_kl_raw(np.maximum(q, 0.0), n))


def _kl_raw(q: np.ndarray, n: int) -> np.ndarray:
    """Unvalidated KL to uniform; q may be batched with the last axis summing to 1."""
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(q > 0.0, q * np.log(n * q), 0.0)
    return terms.sum(axis=-1)


def dual_objective(eta: float, losses: np.ndarray, rho: float) -> float:
    """eta*rho + eta*log((1/n) sum exp(l_i/eta)), stabilized by max subtraction.

    The stabilized form max(l) + eta*log((1/n) sum exp((l_i - max)/eta))
    + eta*rho is an exact rearrangement, not an approximation.
    """
    if eta <= 0.0:
        raise ValueError(f"eta must be positive, got {eta}")
    losses = np.asarray(losses, dtype=np.float64)
    if losses.size == 0:
        raise ValueError("losses must be non-empty")
    top = float(losses.max())
    lse = math.log(float(np.exp((losses - top) / eta).sum()) / len(losses))
    return top + eta * lse + eta * rho


def tilted_weights(losses: np.ndarray, eta: float) -> np.ndarray:
    """q_i proportional to exp(l_i / eta), computed with max subtraction."""
    if eta <= 0.0:
        raise ValueError(f"eta must be positive, got {eta}")
    losses = np.asarray(losses, dtype=np.float64)
    ex = np.exp((losses - losses.max()) / eta)
    return ex / ex.sum()


def _maximal_set(losses: np.ndarray) -> np.ndarray:
    return np.flatnonzero(losses >= losses.max() - _MAX_TIE_TOL)


def _golden_section(f, lo: float, hi: float, tol: float) -> float:
    """Minimize unimodal f on [lo, hi] to interval width tol; returns midpoint."""
    a, b = lo, hi
    h = b - a
    c = b - _INV_PHI * h
    d = a + _INV_PHI * h
    fc, fd = f(c), f(d)
    while h > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            h = b - a
            c = b - _INV_PHI * h
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            h = b - a
            d = a + _INV_PHI * h
            fd = f(d)
    return (a + b) / 2.0


def solve_robust_risk(losses: np.ndarray, rho: float) -> RobustRiskSolution:
    """Robust reweighted mean of ``losses`` over the KL ball of radius ``rho``.

    rho = 0 returns the plain mean with uniform weights. When rho is
    large enough that a uniform point mass on the maximal losses is
    feasible (rho >= log(n/m), m = multiplicity of the maximum), the
    value is the max loss. Otherwise the convex dual is minimized over
    log(eta) by golden-section search and the weights are the
    exponential tilt at the minimizer.
    """
    losses = np.asarray(losses, dtype=np.float64)
    if losses.size == 0:
        raise ValueError("losses must be non-empty")
    if not np.all(np.isfinite(losses)):
        raise ValueError("losses must be finite")
    if rho < 0.0:
        raise ValueError(f"rho must be >= 0, got {rho}")
    n = len(losses)

    if rho == 0.0:
        w = np.full(n, 1.0 / n)
        return RobustRiskSolution(value=float(losses.mean()), eta_star=ETA_INFINITE,
                                  weights=w, dual_gap_bound=0.0)

    max_idx = _maximal_set(losses)
    m = len(max_idx)
    if rho >= math.log(n / m):
        w = np.zeros(n)
        w[max_idx] = 1.0 / m
        return RobustRiskSolution(value=float(losses.max()), eta_star=ETA_BOUNDARY,
                                  weights=w, dual_gap_bound=0.0)

    spread = float(losses.max() - losses.min())  # > 0 here, else m == n above
    log_lo = math.log(_BRACKET_LO * spread)
    log_hi = math.log(_BRACKET_HI * spread)

    def dual_at_log(t: float) -> float:
        return dual_objective(math.exp(t), losses, rho)

    log_eta = _golden_section(dual_at_log, log_lo, log_hi, math.log1p(_ETA_REL_TOL))
    eta = math.exp(log_eta)
    value = dual_objective(eta, losses, rho)

    # the dual is convex in eta, but guard the search with a bracket sweep
    sweep = np.linspace(log_lo, log_hi, _SWEEP_POINTS)
    if min(dual_at_log(t) for t in sweep) < value - _SWEEP_SLACK:
        eta, value = _dense_fallback(dual_at_log, log_lo, log_hi)

    # Value-only search locates eta to ~sqrt(machine eps) relative, which
    # can leave KL(q(eta)) off rho by more than the feasibility tolerance.
    # At the interior optimum the constraint is active and KL(q(eta)) is
    # monotone decreasing in eta, so polish by bisecting KL(q(eta)) = rho.
    eta = _polish_active_constraint(losses, rho, eta)
    value = dual_objective(eta, losses, rho)

    weights = tilted_weights(losses, eta)
    gap = abs(value - float(weights @ losses))
    if gap > _DUAL_GAP_LIMIT:
        eta, value = _dense_fallback(dual_at_log, log_lo, log_hi)
        eta = _polish_active_constraint(losses, rho, eta)
        value = dual_objective(eta, losses, rho)
        weights = tilted_weights(losses, eta)
        gap = abs(value - float(weights @ losses))
        if gap > _DUAL_GAP_LIMIT:
            raise RuntimeError(f"dual gap {gap:.3e} exceeds {_DUAL_GAP_LIMIT:.1e}")
    return RobustRiskSolution(value=value, eta_star=eta, weights=weights, dual_gap_bound=gap)


def _polish_active_constraint(losses: np.ndarray, rho: float, eta: float) -> float:
    """Drive KL of the tilted weights onto rho by bisection around eta."""

    def kl_at(e: float) -> float:
        q = tilted_weights(losses, e)
        return float(_kl_raw(q, len(losses)))

    lo = hi = eta
    if kl_at(eta) > rho:  # tilt too sharp: grow eta until feasible
        for _ in range(80):
            hi *= 2.0
            if kl_at(hi) <= rho:
                break
        else:
            return eta
    else:  # tilt too flat: shrink eta until the constraint is crossed
        for _ in range(80):
            lo *= 0.5
            if kl_at(lo) > rho:
                break
        else:
            return eta
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if kl_at(mid) > rho:
            lo = mid
        else:
            hi = mid
    return hi


def _dense_fallback(dual_at_log, log_lo: float, log_hi: float) -> tuple[float, float]:
    grid = np.linspace(log_lo, log_hi, _DENSE_SWEEP_POINTS)
    vals = np.array([dual_at_log(t) for t in grid])
    k = int(vals.argmin())
    a = grid[max(k - 1, 0)]
    b = grid[min(k + 1, len(grid) - 1)]
    log_eta = _golden_section(dual_at_log, a, b, math.log1p(_ETA_REL_TOL))
    return math.exp(log_eta), dual_at_log(log_eta)


# ---------------------------------------------------------------------------
# primal oracle (small n only)
# ---------------------------------------------------------------------------

_GRID_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _compositions(total: int, parts: int) -> np.ndarray:
    """All int16 vectors of length ``parts`` with non-negative entries
    summing to ``total``, enumerated without Python-level row loops."""
    cols = np.zeros((1, 0), dtype=np.int16)
    sums = np.zeros(1, dtype=np.int64)
    for _ in range(parts - 1):
        counts = total - sums + 1
        idx = np.repeat(np.arange(len(sums)), counts)
        offsets = np.cumsum(counts) - counts
        ks = (np.arange(len(idx)) - offsets[idx]).astype(np.int16)
        cols = np.concatenate([cols[idx], ks[:, None]], axis=1)
        sums = sums[idx] + ks
    last = (total - sums).astype(np.int16)
    return np.concatenate([cols, last[:, None]], axis=1)


def _coarse_grid(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(integer grid, float32 grid, KL) for the coarse simplex lattice.

    Cached per n; losses never enter here. The float32 copy is for fast
    ranking only; selected rows are rebuilt exactly from the integers."""
    if n in _GRID_CACHE:
        return _GRID_CACHE[n]
    denom = round(1.0 / _COARSE_STEP)
    ints = _compositions(denom, n)
    kl = np.empty(len(ints))
    chunk = 1 << 19
    for lo in range(0, len(ints), chunk):
        q64 = ints[lo : lo + chunk].astype(np.float64) / denom
        kl[lo : lo + chunk] = _kl_raw(q64, n)
    q32 = ints.astype(np.float32) / np.float32(denom)
    _GRID_CACHE[n] = (ints, q32, kl)
    return _GRID_CACHE[n]


_LATTICE_CACHE: dict[int, np.ndarray] = {}


def _zero_sum_lattice(n: int) -> np.ndarray:
    """Integer direction lattice {d: sum d = 0, |d_i| <= radius}, minus the
    origin; multiplied by the step size it forms each refinement's grid."""
    if n in _LATTICE_CACHE:
        return _LATTICE_CACHE[n]
    r = _REFINE_RADIUS[n]
    axes = [np.arange(-r, r + 1)] * (n - 1)
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n - 1)
    last = -mesh.sum(axis=1)
    keep = np.abs(last) <= r
    lattice = np.concatenate([mesh[keep], last[keep, None]], axis=1)
    lattice = lattice[np.any(lattice != 0, axis=1)]
    _LATTICE_CACHE[n] = lattice.astype(np.float64)
    return _LATTICE_CACHE[n]


def _max_direction(losses: np.ndarray) -> np.ndarray:
    """Uniform point mass over the maximal losses; the feasible-set extreme
    with the largest objective once the KL budget allows it."""
    n = len(losses)
    idx = _maximal_set(losses)
    d = np.zeros(n)
    d[idx] = 1.0 / len(idx)
    return d


def _project_to_boundary(q_batch: np.ndarray, losses: np.ndarray, rho: float) -> tuple[np.ndarray, np.ndarray]:
    """Return feasible boundary points derived from each candidate q.

    Candidates inside the KL ball are pushed along the segment toward the
    maximal point mass (raising the objective) until the constraint is
    tight; candidates outside are pulled toward uniform (mixing toward
    uniform never raises KL) until they re-enter. Both cases bisect the
    segment parameter, so every output satisfies the constraint.
    """
    n = len(losses)
    kl0 = _kl_raw(q_batch, n)
    inside = kl0 <= rho
    out = np.empty_like(q_batch)

    if inside.any():
        qs = q_batch[inside]
        d = _max_direction(losses)
        if _kl_raw(d[None, :], n)[0] <= rho:
            out[inside] = d
        else:
            t_lo = np.zeros(len(qs))
            t_hi = np.ones(len(qs))
            for _ in range(64):
                tm = 0.5 * (t_lo + t_hi)
                qm = (1.0 - tm)[:, None] * qs + tm[:, None] * d[None, :]
                ok = _kl_raw(qm, n) <= rho
                t_lo = np.where(ok, tm, t_lo)
                t_hi = np.where(ok, t_hi, tm)
            out[inside] = (1.0 - t_lo)[:, None] * qs + t_lo[:, None] * d[None, :]

    if (~inside).any():
        qs = q_batch[~inside]
        u = np.full(n, 1.0 / n)
        t_lo = np.zeros(len(qs))  # infeasible end
        t_hi = np.ones(len(qs))  # uniform end, always feasible
        for _ in range(64):
            tm = 0.5 * (t_lo + t_hi)
            qm = (1.0 - tm)[:, None] * qs + tm[:, None] * u[None, :]
            ok = _kl_raw(qm, n) <= rho
            t_hi = np.where(ok, tm, t_hi)
            t_lo = np.where(ok, t_lo, tm)
        out[~inside] = (1.0 - t_hi)[:, None] * qs + t_hi[:, None] * u[None, :]

    return out, out @ losses


def brute_force_primal(losses: np.ndarray, rho: float) -> tuple[float, np.ndarray]:
    """Oracle-scale direct maximization of the reweighted mean over the KL
    ball: coarse simplex grid, projection of the best candidates onto the
    constraint boundary, then two local lattice refinements with the step
    divided by 10 each (every candidate re-projected before scoring).
    """
    losses = np.asarray(losses, dtype=np.float64)
    n = len(losses)
    if n > _ORACLE_MAX_N:
        raise ValueError("oracle scale exceeded")
    if rho < 0.0:
        raise ValueError(f"rho must be >= 0, got {rho}")
    if rho == 0.0:
        return float(losses.mean()), np.full(n, 1.0 / n)
    if n == 1:
        return float(losses[0]), np.ones(1)

    ints, grid32, kl = _coarse_grid(n)
    objs = grid32 @ losses.astype(np.float32)
    objs[kl > rho + 1e-12] = -np.inf
    top = np.argpartition(objs, -_BOOST_TOP)[-_BOOST_TOP:]
    top = top[np.isfinite(objs[top])]
    denom = round(1.0 / _COARSE_STEP)
    batch = np.concatenate(
        [np.full((1, n), 1.0 / n), ints[top].astype(np.float64) / denom], axis=0
    )
    proj, vals = _project_to_boundary(batch, losses, rho)
    best = int(vals.argmax())
    q_best, v_best = proj[best], float(vals[best])

    lattice = _zero_sum_lattice(n)
    for step in _REFINE_STEPS:
        directions = lattice * step
        for _ in range(_MAX_PASSES):
            cands = q_best[None, :] + directions
            cands = cands[np.all(cands >= 0.0, axis=1)]
            if len(cands) == 0:
                break
            proj, vals = _project_to_boundary(cands, losses, rho)
            k = int(vals.argmax())
            if vals[k] <= v_best + 1e-15:
                break
            q_best, v_best = proj[k], float(vals[k])
    return v_best, q_best
