"""Analytic phase: frozen random up-sampling plus the exact RLS classifier.

The classifier never sees old data again: it keeps the regularized inverse
feature autocorrelation R and updates (W, R) from each task's feature block
alone. The recursion is algebraically identical to the joint ridge solve over
all tasks, which `JointCache` re-derives directly for verification.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
import torch

from .encoder import FrozenEncoder, ModalInput
from .numerics import SeededRng, relu, spd_solve
from .pools import PromptModule

# Eq.-15-style updates invert an m x m system for m incoming rows; large tasks
# are split into row blocks this size (valid: the recursion is associative
# over row partitions)
UPDATE_CHUNK_ROWS = 256


class Upsampler:
    """Frozen random expansion of joint embeddings: H = relu(X @ W_up)."""

    def __init__(self, embed_dim: int, up_dim: int, rng: SeededRng):
        if up_dim < 1:
            raise ValueError("up_dim must be >= 1")
        self.embed_dim = embed_dim
        self.up_dim = up_dim
        self.w_up = rng.normal(embed_dim, up_dim, 1.0 / np.sqrt(embed_dim))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.embed_dim:
            raise ValueError(
                f"input dim {x.shape[-1]} != up-sampler input {self.embed_dim}"
            )
        return relu(x @ self.w_up)


def embed(
    encoder: FrozenEncoder,
    prompts: Optional[PromptModule],
    upsampler: Upsampler,
    samples: Sequence[ModalInput],
    batch_size: int = 64,
) -> np.ndarray:
    """Up-sampled feature rows (n, d_up) for a list of samples.

    Prompts are assembled exactly as in the BP forward pass; gradients are
    irrelevant here, so everything runs under no_grad.
    """
    rows = []
    with torch.no_grad():
        for start in range(0, len(samples), batch_size):
            batch = list(samples[start : start + batch_size])
            seq = encoder.build_sequence(batch)
            if prompts is None:
                joint = encoder.encode(seq).joint
            else:
                q_t, q_v = encoder.queries(batch)
                joint = encoder.encode(
                    seq, prompts.prompt_pairs(encoder, q_t, q_v)
                ).joint
            rows.append(joint.numpy())
    if not rows:
        return np.zeros((0, upsampler.up_dim))
    return upsampler(np.concatenate(rows, axis=0))


class AnalyticState:
    """Ridge classifier weights plus the inverse autocorrelation matrix.

    Updates are strictly sequential; prediction on a fitted state is
    read-only and safe to share.
    """

    def __init__(self, feature_dim: int, eta_reg: float):
        if not eta_reg > 0:
            raise ValueError(f"eta_reg must be > 0, got {eta_reg}")
        self.feature_dim = feature_dim
        self.eta_reg = float(eta_reg)
        self.weight = np.zeros((feature_dim, 0))
        self.R = np.eye(feature_dim) / self.eta_reg

    # ------------------------------------------------------------------
    @classmethod
    def init_first(cls, H: np.ndarray, Y: np.ndarray, eta_reg: float) -> "AnalyticState":
        """Direct ridge solve on the first task's features and one-hot labels."""
        H = np.asarray(H, dtype=np.float64)
        Y = np.asarray(Y, dtype=np.float64)
        if H.shape[0] != Y.shape[0]:
            raise ValueError(f"row mismatch: H {H.shape} vs Y {Y.shape}")
        state = cls(H.shape[1], eta_reg)
        d = H.shape[1]
        gram = H.T @ H + eta_reg * np.eye(d)
        state.R = spd_solve(gram, np.eye(d))
        state.R = 0.5 * (state.R + state.R.T)
        state.weight = spd_solve(gram, H.T @ Y) if Y.shape[1] else np.zeros((d, 0))
        return state

    @property
    def class_count(self) -> int:
        return self.weight.shape[1]

    def copy(self) -> "AnalyticState":
        dup = AnalyticState(self.feature_dim, self.eta_reg)
        dup.weight = self.weight.copy()
        dup.R = self.R.copy()
        return dup

    # ------------------------------------------------------------------
    def expand_classes(self, new_classes: int) -> "AnalyticState":
        """Append zero columns for classes introduced by a new task."""
        if new_classes < 1:
            raise ValueError("must expand by at least one class")
        self.weight = np.concatenate(
            [self.weight, np.zeros((self.feature_dim, new_classes))], axis=1
        )
        return self

    def _weight_update(self, H: np.ndarray, Y: np.ndarray) -> None:
        # W_k = W_{k-1} - R_k H^T H W_{k-1} + R_k H^T Y, with R already advanced
        RHt = self.R @ H.T
        self.weight = self.weight - RHt @ (H @ self.weight) + RHt @ Y

    def rls_update(self, H: np.ndarray, Y: np.ndarray) -> "AnalyticState":
        """Absorb one task's (H, Y) block without revisiting past data."""
        H = np.asarray(H, dtype=np.float64)
        Y = np.asarray(Y, dtype=np.float64)
        if H.shape[0] != Y.shape[0]:
            raise ValueError(f"row mismatch: H {H.shape} vs Y {Y.shape}")
        if H.shape[1] != self.feature_dim:
            raise ValueError(
                f"feature dim {H.shape[1]} != state dim {self.feature_dim}"
            )
        if Y.shape[1] != self.class_count:
            raise ValueError(
                f"label width {Y.shape[1]} != registered classes {self.class_count}"
            )
        for start in range(0, H.shape[0], UPDATE_CHUNK_ROWS):
            Hc = H[start : start + UPDATE_CHUNK_ROWS]
            Yc = Y[start : start + UPDATE_CHUNK_ROWS]
            G = Hc @ self.R                                   # (m, d)
            S = G @ Hc.T + np.eye(Hc.shape[0])                # (m, m), SPD
            self.R = self.R - G.T @ spd_solve(S, G)
            self.R = 0.5 * (self.R + self.R.T)
            self._weight_update(Hc, Yc)
        return self

    # ------------------------------------------------------------------
    def logits(self, H: np.ndarray) -> np.ndarray:
        H = np.asarray(H, dtype=np.float64)
        return H @ self.weight

    def predict(self, H: np.ndarray) -> np.ndarray:
        """Argmax class indices; ties break toward the lowest index."""
        if self.class_count == 0:
            raise ValueError("state has no classes")
        return np.argmax(self.logits(H), axis=1)


class JointCache:
    """Verification oracle: the stacked learning problem the recursion replaces.

    Keeps every task's feature block and labels, so the joint ridge solution
    and the running cross-correlation Q can be recomputed directly.
    """

    def __init__(self, eta_reg: float):
        if not eta_reg > 0:
            raise ValueError("eta_reg must be > 0")
        self.eta_reg = float(eta_reg)
        self.tasks: list[tuple[np.ndarray, np.ndarray]] = []

    def add(self, H: np.ndarray, Y: np.ndarray) -> None:
        H = np.asarray(H, dtype=np.float64)
        Y = np.asarray(Y, dtype=np.float64)
        if H.shape[0] != Y.shape[0]:
            raise ValueError("row mismatch between H and Y")
        self.tasks.append((H, Y))

    @property
    def total_classes(self) -> int:
        return max((y.shape[1] for _, y in self.tasks), default=0)

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        """Row-stacked H and zero-padded (block-diagonal) label stack."""
        if not self.tasks:
            raise ValueError("cache is empty")
        width = self.total_classes
        H = np.concatenate([h for h, _ in self.tasks], axis=0)
        Y = np.concatenate(
            [np.pad(y, ((0, 0), (0, width - y.shape[1]))) for _, y in self.tasks],
            axis=0,
        )
        return H, Y

    def q_matrix(self, upto: Optional[int] = None) -> np.ndarray:
        """Q after the first `upto` tasks: H_{1:k}^T Y_{1:k}, zero-padded."""
        if not self.tasks:
            raise ValueError("cache is empty")
        upto = len(self.tasks) if upto is None else upto
        width = self.total_classes
        d = self.tasks[0][0].shape[1]
        Q = np.zeros((d, width))
        for H, Y in self.tasks[:upto]:
            Q[:, : Y.shape[1]] += H.T @ Y
        return Q

    def joint_solve(self) -> tuple[np.ndarray, np.ndarray]:
        """Direct ridge solution (W, R) over all cached data."""
        H, Y = self.stacked()
        d = H.shape[1]
        gram = H.T @ H + self.eta_reg * np.eye(d)
        R = spd_solve(gram, np.eye(d))
        R = 0.5 * (R + R.T)
        W = spd_solve(gram, H.T @ Y)
        return W, R
