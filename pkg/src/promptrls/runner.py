"""End-to-end incremental driver: BP phase then analytic phase per task.

For each task in the stream the driver (i) trains pools and the BP head by
backprop on that task's data, then (ii) feeds the same data once through the
frozen encoder + up-sampler and folds it into the analytic head. Predictions
come from the analytic head except in bp-only mode, which skips step (ii)
and evaluates the BP head directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import torch

from .analytic import AnalyticState, JointCache, Upsampler, embed
from .encoder import EncoderConfig, FrozenEncoder
from .metrics import AccuracyMatrix, acc_metric, fg_metric, stability_plasticity
from .numerics import SeededRng
from .pools import PoolConfig, PromptModule
from .stream import StreamConfig, TaskBatch, apply_missingness, generate_stream
from .training import BpHead, LossBreakdown, TrainerConfig, classify_logits, train_task_bp

METHODS = ("full", "analytic-only", "bp-only", "single-pool", "prompt-vector")


@dataclass(frozen=True)
class AnalyticConfig:
    up_dim: int = 512
    reg_weight: float = 1.0

    def __post_init__(self):
        if self.up_dim < 1:
            raise ValueError("up_dim must be >= 1")
        if not self.reg_weight > 0:
            raise ValueError("reg_weight must be > 0")


@dataclass
class RunResult:
    method: str
    matrix: AccuracyMatrix
    loss_traces: dict[int, list[LossBreakdown]]
    per_step: list[dict]
    cache: JointCache
    analytic_state: AnalyticState
    upsampler: Upsampler
    head: BpHead
    prompts: Optional[PromptModule]
    masked_tests: list[TaskBatch] = field(default_factory=list)

    @property
    def acc(self) -> float:
        return acc_metric(self.matrix)

    @property
    def fg(self) -> Optional[float]:
        if self.matrix.num_tasks < 2:
            return None
        return fg_metric(self.matrix)

    def stability_split(self) -> tuple[Optional[float], Optional[float]]:
        if self.matrix.num_tasks < 2:
            return None, None
        return stability_plasticity(self.matrix)


def _resolve_pool_config(method: str, pools: PoolConfig) -> Optional[PoolConfig]:
    if method == "analytic-only":
        return None
    if method == "single-pool":
        return replace(pools, shared=True, fixed_vector=False)
    if method == "prompt-vector":
        return replace(pools, pool_size=1, fixed_vector=True, shared=False)
    return replace(pools, shared=False, fixed_vector=False)


def mask_stream(
    stream: list[tuple[TaskBatch, TaskBatch]],
    rate: float,
    mode: str,
    data_seed: int,
) -> tuple[list[TaskBatch], list[TaskBatch]]:
    """Apply train/test missingness with independent deterministic seeds."""
    seed_rng = SeededRng(data_seed, (777,))
    train_seed = int(seed_rng.integers(0, 2**63))
    test_seed = int(seed_rng.integers(0, 2**63))
    trains = [apply_missingness(tr, rate, mode, train_seed) for tr, _ in stream]
    tests = [apply_missingness(te, rate, mode, test_seed) for _, te in stream]
    return trains, tests


def run_experiment(
    encoder_cfg: EncoderConfig,
    pool_cfg: PoolConfig,
    trainer_cfg: TrainerConfig,
    analytic_cfg: AnalyticConfig,
    stream_cfg: StreamConfig,
    method: str = "full",
    run_seed: int = 0,
) -> RunResult:
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")

    encoder = FrozenEncoder(encoder_cfg)
    resolved_pools = _resolve_pool_config(method, pool_cfg)
    prompts = (
        PromptModule(resolved_pools, encoder_cfg.embed_dim, SeededRng(run_seed, (401,)))
        if resolved_pools is not None
        else None
    )
    head = BpHead(encoder_cfg.embed_dim)
    upsampler = Upsampler(
        encoder_cfg.embed_dim, analytic_cfg.up_dim, SeededRng(run_seed, (402,))
    )
    state = AnalyticState(analytic_cfg.up_dim, analytic_cfg.reg_weight)
    cache = JointCache(analytic_cfg.reg_weight)
    use_al = method != "bp-only"
    # analytic-only is structurally the full path with prompts off and 0 epochs
    trainer = (
        replace(trainer_cfg, epochs=0) if method == "analytic-only" else trainer_cfg
    )

    stream = generate_stream(stream_cfg)
    masked_train, masked_test = mask_stream(
        stream, stream_cfg.missing_rate, stream_cfg.missing_mode, stream_cfg.data_seed
    )

    K = stream_cfg.num_tasks
    matrix = AccuracyMatrix(K)
    traces: dict[int, list[LossBreakdown]] = {}
    per_step: list[dict] = []

    for k in range(K):
        train = masked_train[k]
        lo, hi = train.class_range
        head.expand(hi - lo)
        traces[k] = train_task_bp(
            encoder, prompts, head, train.samples, train.label_indices,
            trainer, run_seed, k,
        )
        if use_al:
            H = embed(encoder, prompts, upsampler, train.samples)
            if k == 0:
                Y = train.labels[:, :hi]
                state = AnalyticState.init_first(H, Y, analytic_cfg.reg_weight)
            else:
                state.expand_classes(hi - lo)
                Y = train.labels[:, : state.class_count]
                state.rls_update(H, Y)
            cache.add(H, Y)

        step_accs = []
        for i in range(k + 1):
            acc = evaluate_task(encoder, prompts, upsampler, state, head,
                                masked_test[i], use_al)
            matrix.set(i, k, acc)
            step_accs.append(acc)
        per_step.append(
            {"step": k + 1, "avg_acc": float(np.mean(step_accs)), "task_acc": step_accs}
        )

    return RunResult(
        method=method,
        matrix=matrix,
        loss_traces=traces,
        per_step=per_step,
        cache=cache,
        analytic_state=state,
        upsampler=upsampler,
        head=head,
        prompts=prompts,
        masked_tests=masked_test,
    )


def evaluate_task(
    encoder: FrozenEncoder,
    prompts: Optional[PromptModule],
    upsampler: Upsampler,
    state: AnalyticState,
    head: BpHead,
    test: TaskBatch,
    use_al: bool,
) -> float:
    truth = test.label_indices
    if use_al:
        H = embed(encoder, prompts, upsampler, test.samples)
        pred = state.predict(H)
    else:
        with torch.no_grad():
            logits = classify_logits(encoder, prompts, head, test.samples)
        pred = logits.numpy().argmax(axis=1)
    return float(np.mean(pred == truth))
