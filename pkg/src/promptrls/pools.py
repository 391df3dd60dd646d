"""Modality-specific prompt pools.

Each pool holds N learnable prompt components plus attention weights and keys.
A sample's prompt-free query embedding picks a cosine-similarity weight per
component (query Hadamard attention column vs. key column), and the prompt fed
to the encoder is the weighted sum of the components. Pools are the only
trainable state besides the linear BP head.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .encoder import DTYPE, FrozenEncoder, ModalInput
from .numerics import SeededRng

_NORM_FLOOR = 1e-300  # keeps the cosine denominator differentiable; a zero
                      # numerator (zero query or key) then yields weight 0

# components start at zero so the prompted forward pass initially coincides
# with inserting inert tokens; influence then grows only as far as the loss
# pushes it, which keeps later tasks from wrecking earlier embeddings
COMPONENT_INIT_STD = 0.0


@dataclass(frozen=True)
class PoolConfig:
    pool_size: int = 16
    prompt_len: int = 8
    shared: bool = False        # one pool serves both modalities
    fixed_vector: bool = False  # single component, selection weight pinned to 1

    def __post_init__(self):
        if self.fixed_vector and self.pool_size != 1:
            raise ValueError("fixed_vector requires pool_size == 1")
        if self.pool_size < 1 or self.prompt_len < 1:
            raise ValueError("pool_size and prompt_len must be >= 1")


class PromptPool:
    """One modality's pool: components (N, N_p, D), attention (N, D), keys (N, D)."""

    def __init__(self, modality: str, pool_size: int, prompt_len: int,
                 embed_dim: int, rng: SeededRng, fixed_weights: bool = False):
        self.modality = modality
        self.pool_size = pool_size
        self.prompt_len = prompt_len
        self.embed_dim = embed_dim
        self.fixed_weights = fixed_weights
        if COMPONENT_INIT_STD > 0:
            comp = rng.normal(pool_size * prompt_len, embed_dim, COMPONENT_INIT_STD)
            comp = comp.reshape(pool_size, prompt_len, embed_dim).copy()
        else:
            comp = np.zeros((pool_size, prompt_len, embed_dim))
        self.components = torch.from_numpy(comp).requires_grad_(True)
        self.attention = torch.from_numpy(
            rng.normal(pool_size, embed_dim, 1.0)
        ).requires_grad_(True)
        self.keys = torch.from_numpy(
            rng.normal(pool_size, embed_dim, 1.0)
        ).requires_grad_(True)

    def parameters(self) -> list[torch.Tensor]:
        if self.fixed_weights:
            return [self.components]
        return [self.components, self.attention, self.keys]


def compute_weights(pool: PromptPool, queries: torch.Tensor) -> torch.Tensor:
    """Per-component cosine weights, shape (B, N).

    w[b, n] = cos(query_b * attention_n, key_n); differentiable in all three.
    Zero-norm operands (dummy inputs can zero a query) give weight 0.
    """
    if queries.ndim == 1:
        queries = queries.unsqueeze(0)
    if queries.shape[-1] != pool.embed_dim:
        raise ValueError(
            f"query dim {queries.shape[-1]} != pool embed dim {pool.embed_dim}"
        )
    if not torch.isfinite(queries).all():
        raise ValueError("queries contain non-finite entries")
    if pool.fixed_weights:
        return torch.ones(
            (queries.shape[0], pool.pool_size), dtype=DTYPE
        )
    gated = queries.unsqueeze(1) * pool.attention.unsqueeze(0)  # (B, N, D)
    num = (gated * pool.keys.unsqueeze(0)).sum(dim=-1)
    den = gated.norm(dim=-1) * pool.keys.norm(dim=-1).unsqueeze(0)
    return num / den.clamp_min(_NORM_FLOOR)


def assemble_prompt(pool: PromptPool, weights: torch.Tensor) -> torch.Tensor:
    """Weighted sum of the pool's components, shape (B, N_p, D)."""
    if weights.ndim == 1:
        weights = weights.unsqueeze(0)
    if weights.shape[-1] != pool.pool_size:
        raise ValueError(
            f"got {weights.shape[-1]} weights for pool of size {pool.pool_size}"
        )
    return torch.einsum("bn,npd->bpd", weights, pool.components)


def make_counterparts(sample: ModalInput) -> tuple[ModalInput, ModalInput]:
    """(image_only, text_only) copies of a modality-complete sample."""
    if not sample.complete:
        raise ValueError("counterparts are only defined for complete samples")
    zeros_text = np.zeros_like(sample.text_features)
    zeros_image = np.zeros_like(sample.image_features)
    image_only = ModalInput(
        image_features=sample.image_features.copy(),
        text_features=zeros_text,
        has_image=True,
        has_text=False,
    )
    text_only = ModalInput(
        image_features=zeros_image,
        text_features=sample.text_features.copy(),
        has_image=False,
        has_text=True,
    )
    return image_only, text_only


class PromptModule:
    """The pair of pools plus the query->weights->prompt assembly pipeline."""

    def __init__(self, config: PoolConfig, embed_dim: int, rng: SeededRng):
        self.config = config
        if config.shared:
            shared = PromptPool(
                "shared", config.pool_size, config.prompt_len, embed_dim,
                rng.substream(0), fixed_weights=config.fixed_vector,
            )
            self.text_pool = shared
            self.image_pool = shared
        else:
            self.text_pool = PromptPool(
                "text", config.pool_size, config.prompt_len, embed_dim,
                rng.substream(0), fixed_weights=config.fixed_vector,
            )
            self.image_pool = PromptPool(
                "image", config.pool_size, config.prompt_len, embed_dim,
                rng.substream(1), fixed_weights=config.fixed_vector,
            )

    def parameters(self) -> list[torch.Tensor]:
        params = self.text_pool.parameters()
        if self.image_pool is not self.text_pool:
            params = params + self.image_pool.parameters()
        return params

    def assemble(self, q_text: torch.Tensor, q_image: torch.Tensor):
        """(text_prompt, image_prompt) for a batch of query embeddings."""
        w_text = compute_weights(self.text_pool, q_text)
        w_image = compute_weights(self.image_pool, q_image)
        return (
            assemble_prompt(self.text_pool, w_text),
            assemble_prompt(self.image_pool, w_image),
        )

    def prompt_pairs(self, encoder: FrozenEncoder, q_text, q_image):
        """One (text, image) prompt pair per configured prompt layer.

        The same assembled prompt is re-inserted at every prompt layer; the
        pools produce a single prompt per modality per sample.
        """
        p_t, p_v = self.assemble(q_text, q_image)
        return [(p_t, p_v)] * len(encoder.config.prompt_layers)


def reconstruction_loss(
    encoder: FrozenEncoder,
    prompts: PromptModule,
    samples: list[ModalInput],
) -> torch.Tensor:
    """Mean squared query-reconstruction error over complete samples.

    For each complete sample the text-only counterpart must reproduce the
    sample's image query and the image-only counterpart its text query, both
    through the prompted pass; ground-truth queries come from the prompt-free
    pass on the intact input and are constants (no gradient).
    """
    if len(samples) == 0:
        return torch.zeros((), dtype=DTYPE)
    if not all(s.complete for s in samples):
        raise ValueError("reconstruction batch must contain only complete samples")

    q_text_true, q_image_true = encoder.queries(samples)

    pairs = [make_counterparts(s) for s in samples]
    image_only = [p[0] for p in pairs]
    text_only = [p[1] for p in pairs]

    def prompted_pass(counterparts):
        q_t, q_v = encoder.queries(counterparts)
        seq = encoder.build_sequence(counterparts)
        return encoder.encode(seq, prompts.prompt_pairs(encoder, q_t, q_v))

    # image query rebuilt without the image; text query rebuilt without the text
    q_image_hat = prompted_pass(text_only).q_image
    q_text_hat = prompted_pass(image_only).q_text

    err = ((q_image_true - q_image_hat) ** 2).sum(dim=-1) + (
        (q_text_true - q_text_hat) ** 2
    ).sum(dim=-1)
    return err.sum() / len(samples)
