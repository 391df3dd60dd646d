"""Synthetic multi-modal class-incremental streams and the missingness protocol.

Each class owns a pair of Gaussian cluster centers, one per modality, drawn
around a shared latent direction so the modalities are correlated: either one
alone separates the classes imperfectly, both together almost perfectly. The
class list is split into contiguous, disjoint blocks, one block per task.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .encoder import ModalInput
from .numerics import SeededRng

# Center geometry: classes form twin pairs that nearly coincide in one
# modality but are fully separated in the other, with the pairings offset
# between modalities (image twins (0,1)(2,3)..., text twins (1,2)(3,4)...).
# Complete samples therefore separate with large margins while single-modality
# samples face a real ambiguity, which is what the missing-modality protocol
# is supposed to stress. A small class component shared across both centers
# correlates the modalities, so the present one carries a trace of the absent
# one. Weights are fractions of center variance; they sum to 1.
PAIR_WEIGHT = 0.98
UNIQUE_WEIGHT = 0.01
SHARED_WEIGHT = 0.01

MISSING_MODES = ("text", "image", "both")


@dataclass(frozen=True)
class StreamConfig:
    total_classes: int = 20
    num_tasks: int = 5
    train_per_class: int = 25
    test_per_class: int = 25
    input_dim: int = 32
    image_tokens: int = 8
    text_tokens: int = 8
    separation: float = 3.0
    missing_rate: float = 0.7
    missing_mode: str = "both"
    data_seed: int = 1234

    def __post_init__(self):
        if self.total_classes < 1 or self.num_tasks < 1:
            raise ValueError("total_classes and num_tasks must be >= 1")
        if self.total_classes % self.num_tasks != 0:
            raise ValueError(
                f"total_classes {self.total_classes} not divisible by "
                f"num_tasks {self.num_tasks}"
            )
        if not 0.0 <= self.missing_rate < 1.0:
            raise ValueError(f"missing_rate must be in [0, 1), got {self.missing_rate}")
        if self.missing_mode not in MISSING_MODES:
            raise ValueError(
                f"missing_mode must be one of {MISSING_MODES}, got {self.missing_mode!r}"
            )
        if self.train_per_class < 1 or self.test_per_class < 1:
            raise ValueError("samples per class must be >= 1")

    @property
    def classes_per_task(self) -> int:
        return self.total_classes // self.num_tasks


@dataclass
class TaskBatch:
    samples: list[ModalInput]
    labels: np.ndarray  # one-hot over the global class range
    task_index: int
    class_range: tuple[int, int]  # [lo, hi)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if self.labels.shape[0] != len(self.samples):
            raise ValueError("label rows must match sample count")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def label_indices(self) -> np.ndarray:
        return self.labels.argmax(axis=1)


def _class_centers(cfg: StreamConfig, rng: SeededRng) -> tuple[np.ndarray, np.ndarray]:
    """Per-class (image, text) center pairs with twin-pair latent structure."""
    C, D = cfg.total_classes, cfg.input_dim
    img_group = np.arange(C) // 2
    txt_group = ((np.arange(C) + 1) % C) // 2
    pair_img = rng.normal(img_group.max() + 1, D, 1.0)
    pair_txt = rng.normal(txt_group.max() + 1, D, 1.0)
    unique_img = rng.normal(C, D, 1.0)
    unique_txt = rng.normal(C, D, 1.0)
    shared = rng.normal(C, D, 1.0)
    scale = cfg.separation / np.sqrt(D)
    w_pair = np.sqrt(PAIR_WEIGHT)
    w_uniq = np.sqrt(UNIQUE_WEIGHT)
    w_shared = np.sqrt(SHARED_WEIGHT)
    mu_img = scale * (w_pair * pair_img[img_group] + w_uniq * unique_img + w_shared * shared)
    mu_txt = scale * (w_pair * pair_txt[txt_group] + w_uniq * unique_txt + w_shared * shared)
    return mu_img, mu_txt


def _draw_samples(
    cfg: StreamConfig,
    rng: SeededRng,
    cls: int,
    count: int,
    mu_img: np.ndarray,
    mu_txt: np.ndarray,
) -> list[ModalInput]:
    out = []
    for _ in range(count):
        img = mu_img[cls] + rng.normal(cfg.image_tokens, cfg.input_dim, 1.0)
        txt = mu_txt[cls] + rng.normal(cfg.text_tokens, cfg.input_dim, 1.0)
        out.append(ModalInput(image_features=img, text_features=txt))
    return out


def generate_stream(cfg: StreamConfig) -> list[tuple[TaskBatch, TaskBatch]]:
    """K (train, test) task pairs with disjoint contiguous class ranges.

    Missingness is NOT applied here; feed batches through apply_missingness.
    """
    rng = SeededRng(cfg.data_seed, (201,))
    mu_img, mu_txt = _class_centers(cfg, rng)
    tasks = []
    per_task = cfg.classes_per_task
    for k in range(cfg.num_tasks):
        lo, hi = k * per_task, (k + 1) * per_task
        splits = {}
        for split, per_class in (("train", cfg.train_per_class), ("test", cfg.test_per_class)):
            samples: list[ModalInput] = []
            labels: list[int] = []
            for cls in range(lo, hi):
                samples.extend(_draw_samples(cfg, rng, cls, per_class, mu_img, mu_txt))
                labels.extend([cls] * per_class)
            order = rng.permutation(len(samples))
            onehot = np.zeros((len(samples), cfg.total_classes))
            onehot[np.arange(len(samples)), np.asarray(labels)] = 1.0
            splits[split] = TaskBatch(
                samples=[samples[i] for i in order],
                labels=onehot[order],
                task_index=k,
                class_range=(lo, hi),
            )
        tasks.append((splits["train"], splits["test"]))
    return tasks


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def _drop_text(s: ModalInput) -> ModalInput:
    return ModalInput(
        image_features=s.image_features.copy(),
        text_features=np.zeros_like(s.text_features),
        has_image=s.has_image,
        has_text=False,
    )


def _drop_image(s: ModalInput) -> ModalInput:
    return ModalInput(
        image_features=np.zeros_like(s.image_features),
        text_features=s.text_features.copy(),
        has_image=False,
        has_text=s.has_text,
    )


def missing_counts(n: int, rate: float, mode: str) -> tuple[int, int]:
    """(image_only, text_only) sample counts for a batch of size n.

    missing-text drops the text of rate*n samples (making them image-only),
    missing-image symmetrically; missing-both splits the rate evenly. Counts
    round half up; the remainder stays complete.
    """
    if mode not in MISSING_MODES:
        raise ValueError(f"unknown missing mode {mode!r}")
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"missing rate must be in [0, 1), got {rate}")
    if mode == "text":
        return _round_half_up(rate * n), 0
    if mode == "image":
        return 0, _round_half_up(rate * n)
    half = _round_half_up(rate / 2.0 * n)
    return half, half


def apply_missingness(batch: TaskBatch, rate: float, mode: str, seed: int) -> TaskBatch:
    """Deterministically mask modalities on a copy of the batch.

    Sample count, order, labels, and tensor shapes are untouched; masked
    samples get zeroed feature blocks and cleared presence flags.
    """
    n = len(batch)
    n_image_only, n_text_only = missing_counts(n, rate, mode)
    order = SeededRng(seed, (301, batch.task_index)).permutation(n)
    image_only_idx = set(order[:n_image_only].tolist())
    text_only_idx = set(order[n_image_only : n_image_only + n_text_only].tolist())
    samples = []
    for i, s in enumerate(batch.samples):
        if i in image_only_idx:
            samples.append(_drop_text(s))
        elif i in text_only_idx:
            samples.append(_drop_image(s))
        else:
            samples.append(s)
    return TaskBatch(
        samples=samples,
        labels=batch.labels.copy(),
        task_index=batch.task_index,
        class_range=batch.class_range,
    )
