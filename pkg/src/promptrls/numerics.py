"""Shared dense linear-algebra kernels, seeded randomness, and elementary maps.

Everything here is float64 and pure: given the same inputs (and the same RNG
state) every function returns bit-identical results. All other modules get
their floating-point behavior and their randomness from this module.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve


class NumericalError(RuntimeError):
    """A numerically required property (e.g. positive definiteness) failed."""


def _as_float64(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


class SeededRng:
    """Deterministic random stream (PCG64) owned by a single caller.

    The same seed always reproduces the same draw sequence, across runs and
    platforms. ``spawn_key`` derives independent substreams from one root
    seed, so e.g. the shuffle stream of (run_seed, task, epoch) never collides
    with the stream that initialized the pools.
    """

    def __init__(self, seed: int, spawn_key: tuple[int, ...] = ()):
        if not 0 <= int(seed) < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self.spawn_key = tuple(int(k) for k in spawn_key)
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=self.spawn_key)
        self._gen = np.random.Generator(np.random.PCG64(seq))

    def substream(self, *key: int) -> "SeededRng":
        """A fresh independent stream keyed by (seed, *existing key, *key)."""
        return SeededRng(self.seed, self.spawn_key + tuple(key))

    def normal(self, rows: int, cols: int, stddev: float) -> np.ndarray:
        return seeded_normal(self, rows, cols, stddev)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)


def seeded_normal(rng: SeededRng, rows: int, cols: int, stddev: float) -> np.ndarray:
    """rows x cols matrix of i.i.d. normal(0, stddev**2) draws from ``rng``."""
    if rows < 1 or cols < 1:
        raise ValueError(f"rows and cols must be >= 1, got {rows}x{cols}")
    if not stddev > 0:
        raise ValueError(f"stddev must be > 0, got {stddev}")
    return rng._gen.normal(0.0, stddev, size=(rows, cols))


def spd_solve(A, B) -> np.ndarray:
    """Solve A X = B for symmetric positive-definite A via Cholesky.

    Never forms A^-1; callers that truly need the inverse pass B = I.
    Raises ValueError on non-finite or non-symmetric input and
    NumericalError when the factorization fails (A not PD).
    """
    A = _as_float64(A, "A")
    B = _as_float64(B, "B")
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"A must be square, got shape {A.shape}")
    scale = np.abs(A).max()
    if scale > 0 and np.abs(A - A.T).max() > 1e-10 * scale:
        raise ValueError("A is not symmetric within 1e-10 relative")
    if B.ndim == 1:
        B = B[:, None]
        squeeze = True
    else:
        squeeze = False
    if B.shape[0] != A.shape[0]:
        raise ValueError(f"row mismatch: A is {A.shape}, B is {B.shape}")
    try:
        factor = cho_factor(A, lower=True, check_finite=False)
    except LinAlgError as exc:
        raise NumericalError(f"Cholesky factorization failed: {exc}") from exc
    X = cho_solve(factor, B, check_finite=False)
    return X[:, 0] if squeeze else X


def softmax(v) -> np.ndarray:
    """Max-shifted softmax along the last axis; rows sum to 1."""
    v = _as_float64(v, "v")
    shifted = v - v.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def relu(v) -> np.ndarray:
    return np.maximum(_as_float64(v, "v"), 0.0)


def cosine_sim(a, b) -> float:
    """Cosine similarity in [-1, 1]; zero-norm inputs map to 0, never NaN.

    The zero fallback matters: all-zero dummy modality inputs can produce
    zero queries, and those should select nothing rather than crash.
    """
    a = _as_float64(a, "a").ravel()
    b = _as_float64(b, "b").ravel()
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))
