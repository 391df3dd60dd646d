"""Backprop phase: trains the prompt pools and a linear head on each task.

The BP head exists only to give the pools a classification signal; the
analytic head does all real prediction. The head keeps its old columns across
tasks (new classes get zero-initialized columns) and the optimizer is a fresh
AdamW per task phase, since the parameter set changes when the head grows.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F

from .encoder import DTYPE, FrozenEncoder, ModalInput
from .numerics import SeededRng
from .pools import PromptModule, reconstruction_loss

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainerConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-2
    betas: tuple[float, float] = (0.9, 0.999)
    epochs: int = 20
    batch_size: int = 4
    rec_weight: float = 0.01  # lambda in L = L_c + lambda * L_r

    def __post_init__(self):
        if self.rec_weight < 0:
            raise ValueError("rec_weight must be >= 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")


class BpHead:
    """Bias-free linear classifier over the classes seen so far."""

    def __init__(self, embed_dim: int):
        self.embed_dim = embed_dim
        self.weight = torch.zeros((embed_dim, 0), dtype=DTYPE, requires_grad=True)

    @property
    def num_classes(self) -> int:
        return self.weight.shape[1]

    def expand(self, new_classes: int) -> None:
        if new_classes < 1:
            raise ValueError("must expand by at least one class")
        with torch.no_grad():
            tail = torch.zeros((self.embed_dim, new_classes), dtype=DTYPE)
            weight = torch.cat([self.weight, tail], dim=1)
        self.weight = weight.requires_grad_(True)


@dataclass
class LossBreakdown:
    total: float
    classification: float
    reconstruction: float
    rec_weight: float


def _joint_embedding(
    encoder: FrozenEncoder,
    prompts: Optional[PromptModule],
    samples: list[ModalInput],
) -> torch.Tensor:
    """Prompted joint embedding of a batch (prompt-free when prompts is None)."""
    seq = encoder.build_sequence(samples)
    if prompts is None:
        return encoder.encode(seq).joint
    q_text, q_image = encoder.queries(samples)
    return encoder.encode(seq, prompts.prompt_pairs(encoder, q_text, q_image)).joint


def classify_logits(
    encoder: FrozenEncoder,
    prompts: Optional[PromptModule],
    head: BpHead,
    samples: list[ModalInput],
) -> torch.Tensor:
    if head.num_classes < 1:
        raise ValueError("head has no classes registered")
    return _joint_embedding(encoder, prompts, samples) @ head.weight


def forward_classify(
    encoder: FrozenEncoder,
    prompts: Optional[PromptModule],
    head: BpHead,
    samples: list[ModalInput],
) -> torch.Tensor:
    """Class probabilities (B, C_total): softmax of joint-embedding logits."""
    return torch.softmax(classify_logits(encoder, prompts, head, samples), dim=-1)


def total_loss(
    encoder: FrozenEncoder,
    prompts: Optional[PromptModule],
    head: BpHead,
    samples: list[ModalInput],
    labels: np.ndarray,
    rec_weight: float,
) -> tuple[torch.Tensor, LossBreakdown]:
    """Joint objective: mean cross-entropy plus weighted reconstruction error.

    The reconstruction term runs over the batch's complete samples only; a
    batch with none is valid and contributes L_r = 0.
    """
    if len(samples) == 0:
        raise ValueError("batch must be nonempty")
    labels = np.asarray(labels)
    if labels.ndim == 2:  # one-hot rows -> indices
        labels = labels.argmax(axis=1)
    if labels.max() >= head.num_classes:
        raise ValueError(
            f"label {labels.max()} outside head range {head.num_classes}"
        )
    logits = classify_logits(encoder, prompts, head, samples)
    target = torch.from_numpy(labels.astype(np.int64))
    cls = F.cross_entropy(logits, target)
    if prompts is not None:
        complete = [s for s in samples if s.complete]
        rec = reconstruction_loss(encoder, prompts, complete)
    else:
        rec = torch.zeros((), dtype=DTYPE)
    loss = cls + rec_weight * rec
    breakdown = LossBreakdown(
        total=float(loss.detach()),
        classification=float(cls.detach()),
        reconstruction=float(rec.detach()),
        rec_weight=rec_weight,
    )
    return loss, breakdown


def train_task_bp(
    encoder: FrozenEncoder,
    prompts: Optional[PromptModule],
    head: BpHead,
    samples: list[ModalInput],
    labels: np.ndarray,
    cfg: TrainerConfig,
    run_seed: int,
    task_index: int,
) -> list[LossBreakdown]:
    """Optimize pools + head on one task; returns per-epoch mean losses.

    Batch order is a deterministic function of (run_seed, task_index, epoch),
    so identical seeds give bitwise-identical parameters.
    """
    if len(samples) == 0:
        log.warning("task %d has no training data; skipping BP phase", task_index)
        return []
    params = [head.weight] if prompts is None else prompts.parameters() + [head.weight]
    trace: list[LossBreakdown] = []
    if cfg.epochs == 0:
        return trace
    optimizer = torch.optim.AdamW(
        params, lr=cfg.learning_rate, weight_decay=cfg.weight_decay, betas=cfg.betas
    )
    labels = np.asarray(labels)
    n = len(samples)
    for epoch in range(cfg.epochs):
        order = SeededRng(run_seed, (11, task_index, epoch)).permutation(n)
        total = cls_sum = rec_sum = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = [samples[i] for i in idx]
            loss, parts = total_loss(
                encoder, prompts, head, batch, labels[idx], cfg.rec_weight
            )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += parts.total * len(idx)
            cls_sum += parts.classification * len(idx)
            rec_sum += parts.reconstruction * len(idx)
        trace.append(
            LossBreakdown(
                total=total / n,
                classification=cls_sum / n,
                reconstruction=rec_sum / n,
                rec_weight=cfg.rec_weight,
            )
        )
    return trace
