"""Artifact writers: JSON/CSV with exact float round-trip, npz checkpoints.

Every float is emitted with 17 significant digits, so parsing the artifact
recovers the original 64-bit value bit for bit.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import numpy as np

CHECKPOINT_VERSION = 1


def fmt_float(x: float) -> str:
    return format(float(x), ".17g")


def _json_value(obj) -> str:
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        items = ", ".join(f"{json.dumps(str(k))}: {_json_value(v)}" for k, v in obj.items())
        return "{" + items + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_json_value(v) for v in obj) + "]"
    raise TypeError(f"cannot serialize {type(obj)!r}")


def dump_json(obj, path: Path) -> None:
    Path(path).write_text(_json_value(obj) + "\n", encoding="utf-8")


def append_jsonl(obj, fh) -> None:
    fh.write(_json_value(obj) + "\n")


def write_matrix_csv(matrix, path: Path) -> None:
    """Accuracy matrix as CSV: one row per task, one column per step."""
    a = matrix.to_array()
    K = matrix.num_tasks
    lines = ["task," + ",".join(f"step_{j + 1}" for j in range(K))]
    for i in range(K):
        cells = ["" if np.isnan(a[i, j]) else fmt_float(a[i, j]) for j in range(K)]
        lines.append(f"task_{i + 1}," + ",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_steps_csv(per_step: list[dict], path: Path) -> None:
    lines = ["step,avg_acc"]
    for row in per_step:
        lines.append(f"{row['step']},{fmt_float(row['avg_acc'])}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_sweep_csv(axis: str, rows: list[dict], path: Path) -> None:
    lines = ["axis,value,acc,fg"]
    for row in rows:
        fg = "" if row["fg"] is None else fmt_float(row["fg"])
        lines.append(f"{axis},{row['value']},{fmt_float(row['acc'])},{fg}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def save_checkpoint(path: Path, result, config_dict: dict) -> None:
    """Persist pools, heads, and analytic state with a format version tag."""
    arrays: dict[str, np.ndarray] = {
        "bp_head": result.head.weight.detach().numpy(),
        "analytic_weight": result.analytic_state.weight,
        "analytic_R": result.analytic_state.R,
        "w_up": result.upsampler.w_up,
    }
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "method": result.method,
        "eta_reg": result.analytic_state.eta_reg,
        "config": config_dict,
        "pools": [],
    }
    if result.prompts is not None:
        pools = {"text": result.prompts.text_pool}
        if result.prompts.image_pool is not result.prompts.text_pool:
            pools["image"] = result.prompts.image_pool
        for tag, pool in pools.items():
            meta["pools"].append(tag)
            arrays[f"pool_{tag}_components"] = pool.components.detach().numpy()
            arrays[f"pool_{tag}_attention"] = pool.attention.detach().numpy()
            arrays[f"pool_{tag}_keys"] = pool.keys.detach().numpy()
    np.savez(path, _meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
             **arrays)


def load_checkpoint(path: Path) -> tuple[dict, dict[str, np.ndarray]]:
    """(metadata, arrays); refuses checkpoints with a different version tag."""
    with np.load(path) as data:
        meta = json.loads(bytes(data["_meta"]).decode())
        version = meta.get("format_version")
        if version != CHECKPOINT_VERSION:
            raise ValueError(
                f"checkpoint format version {version!r} unsupported "
                f"(expected {CHECKPOINT_VERSION})"
            )
        arrays = {k: data[k] for k in data.files if k != "_meta"}
    return meta, arrays
