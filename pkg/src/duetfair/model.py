"""Differentiable pixel-wise segmentation model with optional
subgroup-conditioned mixture-of-experts feature adaptation.

Architecture (kept deliberately small so exact gradients stay cheap):

    encoder   3x3 neighborhood linear map per pixel (zero-padded), tanh,
              giving d features per pixel
    adapter   (optional) per pixel: gate scores for M experts from the
              feature concatenated with the one-hot group; top-K experts
              by score (ties broken toward the lower index); softmax over
              the selected scores; output = feature + sum of weighted
              affine expert transforms (residual)
    decoder   linear d -> 1 logit per pixel, clipped to [-15, 15], sigmoid

Per-sample loss is 0.5 * mean binary cross-entropy + 0.5 * soft Dice
with additive smoothing 1.0.

Gradients are exact reverse-mode, hand-derived and vectorized over the
batch; the top-K selection is treated as constant at the evaluated
point, and the logit clip passes gradient only strictly inside its
range. ``loss_and_grad`` returns per-sample gradients so any weighted
combination can be formed without re-evaluating the model.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .core import LossVector, Sample
from .rng import substream

LOGIT_CLIP = 15.0
DICE_SMOOTH = 1.0

_INIT_STREAM = 0x6D6F64656C  # parameter-init substream id


@dataclass(frozen=True)
class ModelConfig:
    feature_dim: int = 8
    num_experts: int = 4
    top_k: int = 2
    use_dmoe: bool = True
    num_groups: int = 4
    height: int = 16
    width: int = 16

    def __post_init__(self):
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        if not 1 <= self.top_k <= self.num_experts:
            raise ValueError(f"need 1 <= top_k <= num_experts, got K={self.top_k}, M={self.num_experts}")
        if self.num_groups < 1:
            raise ValueError("num_groups must be >= 1")


def layout_for(config: ModelConfig) -> tuple[tuple[str, int, tuple[int, ...]], ...]:
    """Named parameter blocks as (name, offset, shape), in flat order."""
    d, m, g = config.feature_dim, config.num_experts, config.num_groups
    shapes = [
        ("enc_w", (d, 9)),
        ("enc_b", (d,)),
        ("expert_w", (m, d, d)),
        ("expert_b", (m, d)),
        ("gate_w", (m, d + g)),
        ("dec_w", (d,)),
        ("dec_b", (1,)),
    ]
    out = []
    offset = 0
    for name, shape in shapes:
        out.append((name, offset, shape))
        offset += int(np.prod(shape))
    return tuple(out)


@dataclass(frozen=True)
class ModelParams:
    flat: np.ndarray
    layout: tuple[tuple[str, int, tuple[int, ...]], ...]

    def __post_init__(self):
        total = sum(int(np.prod(shape)) for _, _, shape in self.layout)
        if len(self.flat) != total:
            raise ValueError(f"flat vector length {len(self.flat)} != layout total {total}")
        if not np.all(np.isfinite(self.flat)):
            raise ValueError("parameters contain non-finite values")

    def block(self, name: str) -> np.ndarray:
        for bname, offset, shape in self.layout:
            if bname == name:
                return self.flat[offset : offset + int(np.prod(shape))].reshape(shape)
        raise KeyError(name)

    @property
    def size(self) -> int:
        return len(self.flat)


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Seeded init: encoder/decoder uniform on [-1/sqrt(fan_in), +...];
    expert and gate blocks zero so training starts at the residual identity."""
    layout = layout_for(config)
    total = sum(int(np.prod(shape)) for _, _, shape in layout)
    flat = np.zeros(total)
    rng = substream(seed, _INIT_STREAM)
    params = ModelParams(flat=flat, layout=layout)
    for name, fan_in in (("enc_w", 9), ("enc_b", 9), ("dec_w", config.feature_dim), ("dec_b", config.feature_dim)):
        blk = params.block(name)
        s = 1.0 / math.sqrt(fan_in)
        blk.ravel()[:] = (rng.uniform(blk.size) * 2.0 - 1.0) * s
    return params


def _check_layout(params: ModelParams, config: ModelConfig) -> None:
    if params.layout != layout_for(config):
        raise ValueError("parameter layout does not match model config")


def _patches(images: np.ndarray) -> np.ndarray:
    """(N, H, W) -> (N, H, W, 9) of 3x3 neighborhoods, zero-padded,
    neighbor order row-major in (dy, dx)."""
    n, h, w = images.shape
    padded = np.zeros((n, h + 2, w + 2))
    padded[:, 1:-1, 1:-1] = images
    cols = [padded[:, dy : dy + h, dx : dx + w] for dy in range(3) for dx in range(3)]
    return np.stack(cols, axis=-1)


def _top_k(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest entries along the last axis, by descending
    score with ties broken toward the lower index."""
    s = scores.copy()
    picks = []
    for _ in range(k):
        idx = s.argmax(axis=-1)
        picks.append(idx)
        np.put_along_axis(s, idx[..., None], -np.inf, axis=-1)
    return np.stack(picks, axis=-1)


def _softmax_last(x: np.ndarray) -> np.ndarray:
    ex = np.exp(x - x.max(axis=-1, keepdims=True))
    return ex / ex.sum(axis=-1, keepdims=True)


def _forward_cached(
    images: np.ndarray,
    groups: np.ndarray,
    params: ModelParams,
    config: ModelConfig,
    patches: np.ndarray | None = None,
) -> dict:
    """Batched forward pass keeping every intermediate the backward needs.

    ``patches`` may be precomputed (it depends on the images only), which
    lets training loops skip reassembling it every step.
    """
    _check_layout(params, config)
    n, h, w = images.shape
    d, m, k = config.feature_dim, config.num_experts, config.top_k
    p = h * w

    if patches is None:
        patches = _patches(images).reshape(n, p, 9)
    z = patches @ params.block("enc_w").T
    z += params.block("enc_b")
    feat = np.tanh(z)  # (n, p, d)

    cache = {"patches": patches, "feat": feat, "groups": groups}
    if config.use_dmoe:
        gate_w = params.block("gate_w")
        gate_f, gate_g = gate_w[:, :d], gate_w[:, d:]
        scores = feat @ gate_f.T
        scores += gate_g.T[groups][:, None, :]  # (n, p, m)
        sel = _top_k(scores, k)  # (n, p, k)
        sel_scores = np.take_along_axis(scores, sel, axis=-1)
        omega = _softmax_last(sel_scores)  # (n, p, k)
        # per-pixel effective weight of each expert (zero if unselected)
        gatesum = np.zeros((n, p, m))
        np.put_along_axis(gatesum, sel, omega, axis=-1)

        ew = params.block("expert_w")  # (m, d, d); expert m maps h to ew[m] @ h + eb[m]
        eb = params.block("expert_b")  # (m, d)
        e_all = (feat @ ew.transpose(2, 0, 1).reshape(d, m * d)).reshape(n, p, m, d)
        e_all += eb
        flat_idx = (np.arange(n * p)[:, None] * m + sel.reshape(n * p, k)).ravel()
        e_sel = e_all.reshape(n * p * m, d)[flat_idx].reshape(n, p, k, d)
        adapted = feat + np.matmul(omega.reshape(n * p, 1, k), e_sel.reshape(n * p, k, d)).reshape(n, p, d)
        cache.update({"sel": sel, "omega": omega, "e_sel": e_sel, "gatesum": gatesum, "adapted": adapted})
    else:
        adapted = feat
        cache["adapted"] = adapted

    raw_logits = adapted @ params.block("dec_w") + params.block("dec_b")[0]  # (n, p)
    logits = np.clip(raw_logits, -LOGIT_CLIP, LOGIT_CLIP)
    preds = 1.0 / (1.0 + np.exp(-logits))
    cache.update({"raw_logits": raw_logits, "preds": preds})
    return cache


def forward(sample: Sample, params: ModelParams, config: ModelConfig) -> np.ndarray:
    """Prediction map for one sample; every entry strictly inside (0, 1)."""
    cache = _forward_cached(sample.image[None], np.asarray([sample.group]), params, config)
    h, w = sample.image.shape
    return cache["preds"][0].reshape(h, w)


def dmoe_adapt(features: np.ndarray, group: int, params: ModelParams, config: ModelConfig) -> np.ndarray:
    """Apply the expert adaptation to one (H, W, d) feature map."""
    if not config.use_dmoe:
        raise ValueError("dmoe_adapt requires use_dmoe=true")
    if not np.all(np.isfinite(features)):
        raise ValueError("features contain non-finite values")
    _check_layout(params, config)
    h, w, d = features.shape
    if d != config.feature_dim:
        raise ValueError(f"feature dim {d} != config feature_dim {config.feature_dim}")
    m, k = config.num_experts, config.top_k
    feat = features.reshape(1, h * w, d)
    gate_w = params.block("gate_w")
    gate_f, gate_g = gate_w[:, :d], gate_w[:, d:]
    scores = feat @ gate_f.T + gate_g.T[np.asarray([group])][:, None, :]
    sel = _top_k(scores, k)
    omega = _softmax_last(np.take_along_axis(scores, sel, axis=-1))
    ew, eb = params.block("expert_w"), params.block("expert_b")
    e_all = (feat @ ew.transpose(2, 0, 1).reshape(d, m * d)).reshape(1, h * w, m, d) + eb
    e_sel = np.take_along_axis(e_all, sel[..., None], axis=2)
    adapted = feat + np.einsum("npk,npkd->npd", omega, e_sel)
    return adapted.reshape(h, w, d)


def per_sample_loss(pred: np.ndarray, mask: np.ndarray) -> float:
    """0.5 * mean BCE + 0.5 * soft Dice (smoothing 1.0); non-negative."""
    if pred.shape != mask.shape:
        raise ValueError(f"prediction shape {pred.shape} != mask shape {mask.shape}")
    if np.any(pred <= 0.0) or np.any(pred >= 1.0):
        raise ValueError("predictions must lie strictly inside (0, 1)")
    p = pred.ravel()
    y = mask.ravel()
    bce = float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))
    inter = float(p @ y)
    dice = 1.0 - (2.0 * inter + DICE_SMOOTH) / (float(p.sum()) + float(y.sum()) + DICE_SMOOTH)
    return 0.5 * bce + 0.5 * dice


def _batch_losses(cache: dict, masks: np.ndarray) -> np.ndarray:
    preds = cache["preds"]  # (n, p)
    n, p = preds.shape
    y = masks.reshape(n, p)
    bce = np.mean(-(y * np.log(preds) + (1.0 - y) * np.log(1.0 - preds)), axis=1)
    inter = np.sum(preds * y, axis=1)
    denom = preds.sum(axis=1) + y.sum(axis=1) + DICE_SMOOTH
    dice = 1.0 - (2.0 * inter + DICE_SMOOTH) / denom
    return 0.5 * bce + 0.5 * dice


def predict_and_loss_arrays(
    images: np.ndarray,
    masks: np.ndarray,
    groups: np.ndarray,
    params: ModelParams,
    config: ModelConfig,
    patches: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Forward-only chunked pass: (predictions (n, H*W), per-sample losses)."""
    n = len(images)
    p = images.shape[1] * images.shape[2]
    preds = np.empty((n, p))
    losses = np.empty(n)
    for lo in range(0, n, _CHUNK):
        hi = min(lo + _CHUNK, n)
        sub = None if patches is None else patches[lo:hi]
        cache = _forward_cached(images[lo:hi], groups[lo:hi], params, config, patches=sub)
        preds[lo:hi] = cache["preds"]
        losses[lo:hi] = _batch_losses(cache, masks[lo:hi])
    return preds, losses


class BatchGradients:
    """Per-sample loss gradients for one evaluated batch.

    ``combine(c)`` returns sum_i c_i * grad(loss_i) without touching the
    model again; rows are ordered like the evaluated batch.
    """

    def __init__(self, sample_ids: np.ndarray, matrix: np.ndarray):
        self.sample_ids = sample_ids
        self._matrix = matrix

    def combine(self, weights: np.ndarray) -> np.ndarray:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (len(self.sample_ids),):
            raise ValueError(f"weights shape {weights.shape} does not match batch size {len(self.sample_ids)}")
        return weights @ self._matrix

    def per_sample(self, row: int) -> np.ndarray:
        return self._matrix[row]


def loss_and_grad(batch: list[Sample], params: ModelParams, config: ModelConfig) -> tuple[LossVector, BatchGradients]:
    """Per-sample losses and exact per-sample parameter gradients."""
    if not batch:
        raise ValueError("batch must be non-empty")
    images = np.stack([s.image for s in batch])
    masks = np.stack([s.mask for s in batch])
    groups = np.asarray([s.group for s in batch])
    sample_ids = np.asarray([s.sample_id for s in batch])
    return loss_and_grad_arrays(images, masks, groups, sample_ids, params, config)


# chunk size for batch evaluation; intermediates for one chunk stay cache
# resident, which matters more than BLAS shape on this workload
_CHUNK = 64


def loss_and_grad_arrays(
    images: np.ndarray,
    masks: np.ndarray,
    groups: np.ndarray,
    sample_ids: np.ndarray,
    params: ModelParams,
    config: ModelConfig,
    patches: np.ndarray | None = None,
) -> tuple[LossVector, BatchGradients]:
    """Array-level twin of ``loss_and_grad`` for training loops that keep
    the cohort stacked (and its patches precomputed) across steps."""
    n = len(images)
    losses = np.empty(n)
    matrix = np.empty((n, params.size))
    for lo in range(0, n, _CHUNK):
        hi = min(lo + _CHUNK, n)
        sub = None if patches is None else patches[lo:hi]
        cache = _forward_cached(images[lo:hi], groups[lo:hi], params, config, patches=sub)
        losses[lo:hi] = _batch_losses(cache, masks[lo:hi])
        matrix[lo:hi] = _backward(cache, masks[lo:hi], params, config)
    bad = np.flatnonzero(~np.isfinite(losses))
    if len(bad):
        raise ValueError(f"non-finite loss for sample {int(sample_ids[bad[0]])}")
    return LossVector(values=losses), BatchGradients(sample_ids=sample_ids, matrix=matrix)


def _backward(cache: dict, masks: np.ndarray, params: ModelParams, config: ModelConfig) -> np.ndarray:
    """Per-sample gradient matrix (n, num_params) for the compound loss."""
    d, m, k, g_count = config.feature_dim, config.num_experts, config.top_k, config.num_groups
    preds = cache["preds"]
    n, p = preds.shape
    y = masks.reshape(n, p)
    feat = cache["feat"]
    groups = cache["groups"]

    # loss -> prediction
    inter = np.sum(preds * y, axis=1, keepdims=True)
    sums = preds.sum(axis=1, keepdims=True) + y.sum(axis=1, keepdims=True) + DICE_SMOOTH
    g_bce = (preds - y) / (preds * (1.0 - preds)) / p
    g_dice = -(2.0 * y * sums - (2.0 * inter + DICE_SMOOTH)) / sums**2
    g_pred = 0.5 * g_bce + 0.5 * g_dice

    # prediction -> logit (sigmoid, clip passes gradient strictly inside range)
    in_range = np.abs(cache["raw_logits"]) <= LOGIT_CLIP
    g_logit = g_pred * preds * (1.0 - preds) * in_range

    dec_w = params.block("dec_w")
    adapted = cache["adapted"]
    grad_dec_w = np.einsum("np,npd->nd", g_logit, adapted)
    grad_dec_b = g_logit.sum(axis=1, keepdims=True)
    g_adapted = g_logit[..., None] * dec_w  # (n, p, d)

    grads = {"dec_w": grad_dec_w, "dec_b": grad_dec_b}

    if config.use_dmoe:
        sel, omega, e_sel, gatesum = cache["sel"], cache["omega"], cache["e_sel"], cache["gatesum"]
        gate_w = params.block("gate_w")
        gate_f = gate_w[:, :d]
        ew = params.block("expert_w")

        g_feat = g_adapted.copy()  # residual path
        g_omega = np.einsum("npd,npkd->npk", g_adapted, e_sel)

        # softmax over the selected scores
        g_sel_scores = omega * (g_omega - np.sum(omega * g_omega, axis=-1, keepdims=True))
        g_scores = np.zeros((n, p, m))
        np.put_along_axis(g_scores, sel, g_sel_scores, axis=-1)

        # gates: scores = feat @ gate_f.T + gate_g[:, group]
        grad_gate_f = np.matmul(g_scores.transpose(0, 2, 1), feat)  # (n, m, d)
        grad_gate_g = np.zeros((n, m, g_count))
        grad_gate_g[np.arange(n), :, groups] = g_scores.sum(axis=1)
        grads["gate_w"] = np.concatenate([grad_gate_f, grad_gate_g], axis=2)
        g_feat += g_scores @ gate_f  # (n, p, d)

        # experts: grad through e_m at pixel (n, p) carries weight gatesum_m
        grad_ew = np.empty((n, m, d, d))
        grad_eb = np.empty((n, m, d))
        for j in range(m):
            weighted = gatesum[:, :, j : j + 1] * g_adapted  # (n, p, d)
            grad_ew[:, j] = np.matmul(weighted.transpose(0, 2, 1), feat)
            grad_eb[:, j] = weighted.sum(axis=1)
            g_feat += weighted @ ew[j]
        grads["expert_w"] = grad_ew
        grads["expert_b"] = grad_eb
    else:
        g_feat = g_adapted
        grads["expert_w"] = np.zeros((n, m, d, d))
        grads["expert_b"] = np.zeros((n, m, d))
        grads["gate_w"] = np.zeros((n, m, d + g_count))

    # tanh encoder
    g_z = (1.0 - feat**2) * g_feat
    grads["enc_w"] = np.matmul(g_z.transpose(0, 2, 1), cache["patches"])  # (n, d, 9)
    grads["enc_b"] = g_z.sum(axis=1)

    matrix = np.empty((n, params.size))
    for name, offset, shape in params.layout:
        size = int(np.prod(shape))
        matrix[:, offset : offset + size] = grads[name].reshape(n, size)
    return matrix


def params_to_json(params: ModelParams) -> str:
    doc = {
        "layout": [{"name": n, "offset": o, "shape": list(s)} for n, o, s in params.layout],
        "flat": [float(v) for v in params.flat],
    }
    return json.dumps(doc, separators=(",", ":"))


def params_from_json(text: str) -> ModelParams:
    doc = json.loads(text)
    layout = tuple((b["name"], int(b["offset"]), tuple(b["shape"])) for b in doc["layout"])
    return ModelParams(flat=np.asarray(doc["flat"], dtype=np.float64), layout=layout)
