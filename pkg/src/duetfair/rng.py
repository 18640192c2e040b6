"""Portable seeded random numbers.

Everything stochastic in this package (cohort synthesis, parameter init,
minibatch shuffling, bootstrap resampling) draws from the counter-based
SplitMix64 stream defined here, so results are reproducible across
platforms and across any re-implementation that follows the same recipe:

    state_k = seed + (k + 1) * 0x9E3779B97F4A7C15   (mod 2**64)
    out_k   = mix64(state_k)

where ``mix64`` is the SplitMix64 finalizer (Steele, Lea & Flood 2014):

    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9   (mod 2**64)
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB   (mod 2**64)
    z = z ^ (z >> 31)

Uniform doubles take the top 53 bits: u = (out >> 11) * 2**-53 in [0, 1).
Gaussians use the Box-Muller transform on consecutive uniform pairs, with
u1 shifted into (0, 1] so log(u1) is finite.

Substreams: ``substream(seed, stream_id)`` gives an independent generator
per (seed, id) pair, so per-sample or per-resample generation is
order-independent and safely parallelizable.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = 0xFFFFFFFFFFFFFFFF
_SUBSTREAM_SALT = 0x8E9D5AAB9C0B1F53

_INV_2_53 = 2.0 ** -53


def _mix64_array(z: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer, vectorized over uint64 arrays (modular arithmetic)."""
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a plain int, reduced mod 2**64."""
    return int(_mix64_array(np.array([z & _MASK64], dtype=np.uint64))[0])


class PortableRng:
    """Counter-based SplitMix64 stream; see module docstring for the recipe."""

    def __init__(self, seed: int):
        self._counter = seed & _MASK64  # python int; masked mod 2**64

    def u64(self, n: int) -> np.ndarray:
        """Next ``n`` raw 64-bit outputs as a uint64 array."""
        ks = np.uint64(self._counter) + _GOLDEN * np.arange(1, n + 1, dtype=np.uint64)
        self._counter = (self._counter + int(_GOLDEN) * n) & _MASK64
        return _mix64_array(ks)

    def uniform(self, n: int) -> np.ndarray:
        """``n`` doubles uniform on [0, 1)."""
        return (self.u64(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53

    def normal(self, n: int) -> np.ndarray:
        """``n`` standard normals via Box-Muller on consecutive uniform pairs."""
        pairs = (n + 1) // 2
        raw = self.u64(2 * pairs) >> np.uint64(11)
        u1 = (raw[0::2].astype(np.float64) + 1.0) * _INV_2_53  # (0, 1]
        u2 = raw[1::2].astype(np.float64) * _INV_2_53  # [0, 1)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out = np.empty(2 * pairs)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n]

    def integers(self, n: int, bound: int) -> np.ndarray:
        """``n`` ints uniform on [0, bound) as floor(u * bound) with 53-bit u."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        return np.floor(self.uniform(n) * bound).astype(np.int64)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of 0..n-1 driven by this stream."""
        out = np.arange(n, dtype=np.int64)
        if n < 2:
            return out
        draws = self.uniform(n - 1)
        for i in range(n - 1, 0, -1):
            j = int(draws[n - 1 - i] * (i + 1))
            out[i], out[j] = out[j], out[i]
        return out

    def choice_without_replacement(self, n: int, k: int) -> np.ndarray:
        """First ``k`` entries of a seeded permutation of 0..n-1, sorted."""
        if not 0 <= k <= n:
            raise ValueError(f"cannot draw {k} of {n} without replacement")
        return np.sort(self.permutation(n)[:k])


def substream(seed: int, stream_id: int) -> PortableRng:
    """Independent generator for (seed, stream_id); order-free across ids."""
    base = mix64((seed & _MASK64) ^ _SUBSTREAM_SALT)
    return PortableRng(mix64((base + int(_GOLDEN) * (stream_id & _MASK64)) & _MASK64))
