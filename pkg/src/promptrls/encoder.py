"""Frozen toy multi-modal transformer.

Stands in for a large pre-trained two-modality backbone at desk scale: it
tokenizes paired feature sequences with one class token per modality, runs a
few frozen transformer blocks, and exposes the two class-token outputs as
per-modality query embeddings plus their mean as the joint embedding.

Weights are drawn once from ``backbone_seed`` and never trained; gradients
flow only through prompt tokens prepended at the configured layers. All
tensors are torch.float64 so downstream exactness tests are meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .numerics import SeededRng

DTYPE = torch.float64


@dataclass(frozen=True)
class EncoderConfig:
    embed_dim: int = 64
    num_layers: int = 4
    num_heads: int = 4
    image_tokens: int = 8
    text_tokens: int = 8
    input_dim: int = 32
    prompt_layers: tuple[int, ...] = (0, 1, 2, 3)
    backbone_seed: int = 7

    def __post_init__(self):
        if self.embed_dim % self.num_heads != 0:
            raise ValueError(
                f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}"
            )
        if self.image_tokens < 1 or self.text_tokens < 1:
            raise ValueError("image_tokens and text_tokens must be >= 1")
        layers = tuple(sorted(set(int(l) for l in self.prompt_layers)))
        if any(l < 0 or l >= self.num_layers for l in layers):
            raise ValueError(
                f"prompt_layers {layers} outside [0, {self.num_layers})"
            )
        object.__setattr__(self, "prompt_layers", layers)

    @property
    def seq_len(self) -> int:
        return 2 + self.text_tokens + self.image_tokens

    @property
    def text_cls_pos(self) -> int:
        return 0

    @property
    def image_cls_pos(self) -> int:
        return 1 + self.text_tokens


@dataclass
class ModalInput:
    """One sample: a text token block, an image token block, presence flags.

    A missing modality keeps its block at the exact shape but all-zero (the
    dummy-input convention), so tensor shapes never depend on the mask.
    """

    image_features: np.ndarray
    text_features: np.ndarray
    has_image: bool = True
    has_text: bool = True

    def __post_init__(self):
        self.image_features = np.asarray(self.image_features, dtype=np.float64)
        self.text_features = np.asarray(self.text_features, dtype=np.float64)
        if self.image_features.ndim != 2 or self.text_features.ndim != 2:
            raise ValueError("feature blocks must be 2-D (tokens x input_dim)")
        if not self.has_image and np.any(self.image_features != 0.0):
            raise ValueError("has_image=False requires an all-zero image block")
        if not self.has_text and np.any(self.text_features != 0.0):
            raise ValueError("has_text=False requires an all-zero text block")

    @property
    def complete(self) -> bool:
        return self.has_image and self.has_text


class EncodeResult(NamedTuple):
    q_text: torch.Tensor   # (B, D) text class-token output
    q_image: torch.Tensor  # (B, D) image class-token output
    joint: torch.Tensor    # (B, D) mean of the two class-token outputs
    tokens: torch.Tensor   # (B, S, D) full output sequence


# prompts argument for encode(): one (text_prompt, image_prompt) pair per
# configured prompt layer, each of shape (B, N_p, D)
PromptPair = tuple[torch.Tensor, torch.Tensor]


class FrozenEncoder:
    """Immutable after construction; two encoders with equal config are
    bit-identical. Safe to share across threads (read-only)."""

    def __init__(self, config: EncoderConfig):
        self.config = config
        rng = SeededRng(config.backbone_seed, spawn_key=(101,))
        D, Din = config.embed_dim, config.input_dim
        hidden = 4 * D

        def frozen(rows, cols, std):
            t = torch.from_numpy(rng.normal(rows, cols, std))
            t.requires_grad_(False)
            return t

        self.w_text_proj = frozen(Din, D, 1.0 / np.sqrt(Din))
        self.w_image_proj = frozen(Din, D, 1.0 / np.sqrt(Din))
        self.cls_text = frozen(1, D, 1.0)[0]
        self.cls_image = frozen(1, D, 1.0)[0]
        self.type_text = frozen(1, D, 0.5)[0]
        self.type_image = frozen(1, D, 0.5)[0]
        self.pos_embed = frozen(config.seq_len, D, 0.5)

        self.layers = []
        for _ in range(config.num_layers):
            self.layers.append(
                {
                    "wq": frozen(D, D, 1.0 / np.sqrt(D)),
                    "wk": frozen(D, D, 1.0 / np.sqrt(D)),
                    "wv": frozen(D, D, 1.0 / np.sqrt(D)),
                    "wo": frozen(D, D, 1.0 / np.sqrt(D)),
                    "w1": frozen(D, hidden, 1.0 / np.sqrt(D)),
                    "w2": frozen(hidden, D, 1.0 / np.sqrt(hidden)),
                }
            )
        self._ln_weight = torch.ones(D, dtype=DTYPE)
        self._ln_bias = torch.zeros(D, dtype=DTYPE)

    # ------------------------------------------------------------------
    def build_sequence(self, samples: ModalInput | Sequence[ModalInput]) -> torch.Tensor:
        """Token sequence [cls_text, text block, cls_image, image block].

        Length is always 2 + T + V; a missing modality contributes the
        projection of its zero block plus positional/type embeddings.
        """
        if isinstance(samples, ModalInput):
            samples = [samples]
        cfg = self.config
        T, V, Din = cfg.text_tokens, cfg.image_tokens, cfg.input_dim
        for s in samples:
            if s.text_features.shape != (T, Din):
                raise ValueError(
                    f"text block shape {s.text_features.shape}, expected {(T, Din)}"
                )
            if s.image_features.shape != (V, Din):
                raise ValueError(
                    f"image block shape {s.image_features.shape}, expected {(V, Din)}"
                )
        text = torch.from_numpy(np.stack([s.text_features for s in samples]))
        image = torch.from_numpy(np.stack([s.image_features for s in samples]))
        B = text.shape[0]
        text_tok = text @ self.w_text_proj
        image_tok = image @ self.w_image_proj
        cls_t = self.cls_text.expand(B, 1, -1)
        cls_v = self.cls_image.expand(B, 1, -1)
        seq = torch.cat([cls_t, text_tok, cls_v, image_tok], dim=1)
        type_row = torch.cat(
            [
                self.type_text.expand(1 + T, -1),
                self.type_image.expand(1 + V, -1),
            ],
            dim=0,
        )
        return seq + self.pos_embed + type_row

    # ------------------------------------------------------------------
    def _ln(self, x: torch.Tensor) -> torch.Tensor:
        D = self.config.embed_dim
        return F.layer_norm(x, (D,), self._ln_weight, self._ln_bias, eps=1e-6)

    def _attention(
        self,
        x: torch.Tensor,
        layer: dict,
        prompt_tokens: Optional[torch.Tensor] = None,
    ) -> torch.Tensor:
        """Self-attention over x, with prompt tokens as extra key/value context.

        Prompts are projected raw (no layer norm), prefix-tuning style: a
        zero prompt contributes a zero value vector, so prompt influence
        scales with the learned component magnitudes instead of being blown
        up to unit scale by normalization.
        """
        B, S, D = x.shape
        h = self.config.num_heads
        dh = D // h

        def split(t: torch.Tensor) -> torch.Tensor:
            return t.view(B, -1, h, dh).transpose(1, 2)

        q = split(x @ layer["wq"])
        k = x @ layer["wk"]
        v = x @ layer["wv"]
        if prompt_tokens is not None:
            k = torch.cat([prompt_tokens @ layer["wk"], k], dim=1)
            v = torch.cat([prompt_tokens @ layer["wv"], v], dim=1)
        scores = q @ split(k).transpose(-2, -1) / np.sqrt(dh)
        out = torch.softmax(scores, dim=-1) @ split(v)
        out = out.transpose(1, 2).reshape(B, S, D)
        return out @ layer["wo"]

    def _block(
        self,
        x: torch.Tensor,
        layer: dict,
        prompt_tokens: Optional[torch.Tensor] = None,
    ) -> torch.Tensor:
        x = x + self._attention(self._ln(x), layer, prompt_tokens)
        x = x + F.gelu(self._ln(x) @ layer["w1"]) @ layer["w2"]
        return x

    def encode(
        self,
        seq: torch.Tensor,
        prompts: Optional[Sequence[PromptPair]] = None,
    ) -> EncodeResult:
        """Run the frozen blocks, optionally with prompt tokens.

        ``prompts`` holds one (text_prompt, image_prompt) pair per configured
        prompt layer; each pair is prepended to that layer's attention input
        as extra key/value context only, so prompt positions produce no
        outputs of their own and the sequence length never changes. An empty
        list means no prompts.
        """
        cfg = self.config
        if seq.ndim != 3 or seq.shape[1] != cfg.seq_len or seq.shape[2] != cfg.embed_dim:
            raise ValueError(
                f"sequence shape {tuple(seq.shape)}, expected (B, {cfg.seq_len}, {cfg.embed_dim})"
            )
        if prompts is not None and len(prompts) == 0:
            prompts = None
        by_layer: dict[int, PromptPair] = {}
        if prompts is not None:
            if len(prompts) != len(cfg.prompt_layers):
                raise ValueError(
                    f"got {len(prompts)} prompt pairs for {len(cfg.prompt_layers)} prompt layers"
                )
            for layer_idx, (p_t, p_v) in zip(cfg.prompt_layers, prompts):
                for p in (p_t, p_v):
                    if p.ndim != 3 or p.shape[0] != seq.shape[0] or p.shape[2] != cfg.embed_dim:
                        raise ValueError(
                            f"prompt block shape {tuple(p.shape)}, expected "
                            f"({seq.shape[0]}, N_p, {cfg.embed_dim})"
                        )
                by_layer[layer_idx] = (p_t, p_v)

        x = seq
        for idx, layer in enumerate(self.layers):
            if idx in by_layer:
                p_t, p_v = by_layer[idx]
                x = self._block(x, layer, torch.cat([p_t, p_v], dim=1))
            else:
                x = self._block(x, layer)
        x = self._ln(x)
        q_text = x[:, cfg.text_cls_pos]
        q_image = x[:, cfg.image_cls_pos]
        joint = 0.5 * (q_text + q_image)
        return EncodeResult(q_text=q_text, q_image=q_image, joint=joint, tokens=x)

    # ------------------------------------------------------------------
    def queries(self, samples: ModalInput | Sequence[ModalInput]) -> tuple[torch.Tensor, torch.Tensor]:
        """Prompt-free query pass: (q_text, q_image), detached constants."""
        with torch.no_grad():
            res = self.encode(self.build_sequence(samples), prompts=None)
        return res.q_text, res.q_image
