"""Command-line entry point: run one experiment, sweep a config axis, or
verify the algebraic oracles.

Exit codes: 0 success, 1 runtime/property failure, 2 invalid configuration.
All artifacts land inside the configured output directory.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path

import torch

from . import io
from .config import ConfigError, RunConfig, load_config
from .runner import run_experiment
from .verify import run_all

SWEEP_AXES = (
    "num_tasks", "missing_rate", "up_dim", "reg_weight",
    "pool_size", "prompt_len", "prompt_layers", "separation",
)
_INT_AXES = {"num_tasks", "up_dim", "pool_size", "prompt_len", "prompt_layers"}


def _apply_overrides(config: RunConfig, args) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        config = replace(config, seeds=replace(config.seeds, run_seed=args.seed))
    if getattr(args, "out", None) is not None:
        config = replace(config, output_dir=args.out)
    return config


def _apply_axis(config: RunConfig, axis: str, value: float) -> RunConfig:
    if axis == "num_tasks":
        return replace(config, stream=replace(config.stream, num_tasks=int(value)))
    if axis == "missing_rate":
        return replace(config, stream=replace(config.stream, missing_rate=value))
    if axis == "separation":
        return replace(config, stream=replace(config.stream, separation=value))
    if axis == "up_dim":
        return replace(config, analytic=replace(config.analytic, up_dim=int(value)))
    if axis == "reg_weight":
        return replace(config, analytic=replace(config.analytic, reg_weight=value))
    if axis == "pool_size":
        return replace(config, pools=replace(config.pools, pool_size=int(value)))
    if axis == "prompt_len":
        return replace(config, pools=replace(config.pools, prompt_len=int(value)))
    if axis == "prompt_layers":
        layers = tuple(range(int(value)))
        return replace(config, encoder=replace(config.encoder, prompt_layers=layers))
    raise ConfigError(f"unknown sweep axis {axis!r} (choose from {SWEEP_AXES})")


def execute_run(config: RunConfig) -> dict:
    """Run one experiment and write the five artifacts; returns the metrics."""
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = run_experiment(
        config.encoder_config(),
        config.pool_config(),
        config.trainer,
        config.analytic,
        config.stream_config(),
        method=config.method,
        run_seed=config.seeds.run_seed,
    )
    first, rest = result.stability_split()
    K = result.matrix.num_tasks
    metrics = {
        "method": result.method,
        "num_tasks": K,
        "acc": result.acc,
        "fg": result.fg,
        "first_task_acc": first,
        "rest_acc": rest,
        "per_task_final": [result.matrix.get(k, K - 1) for k in range(K)],
        "seeds": {
            "run_seed": config.seeds.run_seed,
            "data_seed": config.seeds.data_seed,
            "backbone_seed": config.seeds.backbone_seed,
        },
    }
    io.dump_json(metrics, out_dir / "metrics.json")
    io.write_matrix_csv(result.matrix, out_dir / "matrix.csv")
    io.write_steps_csv(result.per_step, out_dir / "steps.csv")
    with open(out_dir / "losses.jsonl", "w", encoding="utf-8") as fh:
        for task, trace in sorted(result.loss_traces.items()):
            for epoch, parts in enumerate(trace):
                io.append_jsonl(
                    {
                        "task": task,
                        "epoch": epoch,
                        "total": parts.total,
                        "classification": parts.classification,
                        "reconstruction": parts.reconstruction,
                    },
                    fh,
                )
    io.save_checkpoint(out_dir / "checkpoint.npz", result, config.to_dict())
    return metrics


def cmd_run(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    metrics = execute_run(config)
    fg = "n/a" if metrics["fg"] is None else f"{metrics['fg']:.4f}"
    print(f"method={metrics['method']} acc={metrics['acc']:.4f} fg={fg} "
          f"-> {config.output_dir}")
    return 0


def cmd_sweep(args) -> int:
    base = _apply_overrides(load_config(args.config), args)
    axis = args.axis
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r} (choose from {SWEEP_AXES})")
    try:
        values = [
            int(v) if axis in _INT_AXES else float(v)
            for v in args.values.split(",") if v.strip() != ""
        ]
    except ValueError as exc:
        raise ConfigError(f"invalid --values list {args.values!r}: {exc}") from exc
    if not values:
        raise ConfigError("--values must name at least one value")
    out_dir = Path(base.output_dir)
    rows = []
    for value in values:
        point = _apply_axis(base, axis, value)
        point = replace(point, output_dir=str(out_dir / f"{axis}_{value}"))
        metrics = execute_run(point)
        rows.append({"value": value, "acc": metrics["acc"], "fg": metrics["fg"]})
        fg = "n/a" if metrics["fg"] is None else f"{metrics['fg']:.4f}"
        print(f"{axis}={value} acc={metrics['acc']:.4f} fg={fg}")
    out_dir.mkdir(parents=True, exist_ok=True)
    io.write_sweep_csv(axis, rows, out_dir / "sweep.csv")
    return 0


def cmd_verify(args) -> int:
    start = time.time()
    results = run_all(args.seed, corrupt_update=args.corrupt_update)
    for res in results:
        print(res.line())
    elapsed = time.time() - start
    if all(r.passed for r in results):
        print(f"all {len(results)} properties hold ({elapsed:.1f}s, seed {args.seed})")
        return 0
    failed = [r.name for r in results if not r.passed]
    print(f"FAILED: {', '.join(failed)} (seed {args.seed})", file=sys.stderr)
    return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="promptrls",
        description="Prompted continual learner with an exact recursive "
                    "least-squares head, on synthetic multi-modal streams.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one experiment from a config file")
    run_p.add_argument("--config", required=True, help="YAML config path")
    run_p.add_argument("--seed", type=int, help="override seeds.run_seed")
    run_p.add_argument("--out", help="override output_dir")
    run_p.set_defaults(func=cmd_run)

    sweep_p = sub.add_parser("sweep", help="re-run the config along one axis")
    sweep_p.add_argument("--config", required=True, help="YAML config path")
    sweep_p.add_argument("--axis", required=True,
                         help=f"one of {', '.join(SWEEP_AXES)}")
    sweep_p.add_argument("--values", required=True,
                         help="comma-separated numeric values")
    sweep_p.add_argument("--seed", type=int, help="override seeds.run_seed")
    sweep_p.add_argument("--out", help="override output_dir")
    sweep_p.set_defaults(func=cmd_sweep)

    verify_p = sub.add_parser("verify", help="run the algebraic oracle suite")
    verify_p.add_argument("--seed", type=int, default=0,
                          help="seed for the randomized instances")
    verify_p.add_argument("--corrupt-update", action="store_true",
                          help=argparse.SUPPRESS)  # mutation-sanity test hook
    verify_p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    torch.set_num_threads(1)
    args = build_parser().parse_args(argv)
    try:
        code = args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure, not a config problem
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1
    return code


if __name__ == "__main__":
    sys.exit(main())
