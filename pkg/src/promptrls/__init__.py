"""Prompt-pool continual learner with an exact recursive least-squares head.

Two training phases per task: backprop tunes modality-specific prompt pools
(and a throwaway linear head) on the new classes, then the analytic phase
folds the task's frozen-encoder features into a ridge classifier via a
recursive update that is provably identical to retraining on all data seen
so far. Synthetic multi-modal streams with configurable missing-modality
rates exercise the whole pipeline.
"""

from .analytic import AnalyticState, JointCache, Upsampler, embed
from .config import ConfigError, RunConfig, load_config
from .encoder import EncoderConfig, FrozenEncoder, ModalInput
from .metrics import AccuracyMatrix, acc_metric, fg_metric, stability_plasticity
from .numerics import NumericalError, SeededRng, cosine_sim, relu, seeded_normal, softmax, spd_solve
from .pools import PoolConfig, PromptModule, PromptPool, assemble_prompt, compute_weights, make_counterparts, reconstruction_loss
from .runner import METHODS, AnalyticConfig, RunResult, run_experiment
from .stream import StreamConfig, TaskBatch, apply_missingness, generate_stream, missing_counts
from .training import BpHead, TrainerConfig, forward_classify, total_loss, train_task_bp

__all__ = [
    "AccuracyMatrix", "AnalyticConfig", "AnalyticState", "BpHead", "ConfigError",
    "EncoderConfig", "FrozenEncoder", "JointCache", "METHODS", "ModalInput",
    "NumericalError", "PoolConfig", "PromptModule", "PromptPool", "RunConfig",
    "RunResult", "SeededRng", "StreamConfig", "TaskBatch", "TrainerConfig",
    "Upsampler", "acc_metric", "apply_missingness", "assemble_prompt",
    "compute_weights", "cosine_sim", "embed", "fg_metric", "forward_classify",
    "generate_stream", "load_config", "make_counterparts", "missing_counts",
    "reconstruction_loss", "relu", "run_experiment", "seeded_normal", "softmax",
    "spd_solve", "stability_plasticity", "total_loss", "train_task_bp",
]

__version__ = "0.1.0"
