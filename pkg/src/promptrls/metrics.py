"""Continual-learning metrics over the task-by-step accuracy matrix."""

from __future__ import annotations

import numpy as np


class AccuracyMatrix:
    """a[i, j] = test accuracy on task i after training through task j (i <= j).

    Indices are 0-based; entry (i, j) is defined only for j >= i.
    """

    def __init__(self, num_tasks: int):
        if num_tasks < 1:
            raise ValueError("num_tasks must be >= 1")
        self.num_tasks = num_tasks
        self._a = np.full((num_tasks, num_tasks), np.nan)

    def set(self, task: int, step: int, value: float) -> None:
        if not 0 <= task <= step < self.num_tasks:
            raise ValueError(f"invalid cell ({task}, {step})")
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"accuracy {value} outside [0, 1]")
        self._a[task, step] = value

    def get(self, task: int, step: int) -> float:
        v = self._a[task, step]
        if np.isnan(v):
            raise ValueError(f"cell ({task}, {step}) not filled")
        return float(v)

    def complete(self) -> bool:
        i, j = np.triu_indices(self.num_tasks)
        return not np.any(np.isnan(self._a[i, j]))

    def to_array(self) -> np.ndarray:
        return self._a.copy()

    @classmethod
    def from_rows(cls, rows: list[list[float]]) -> "AccuracyMatrix":
        """Build from triangular rows: rows[i] holds a[i, i..K-1]."""
        m = cls(len(rows))
        for i, row in enumerate(rows):
            if len(row) != m.num_tasks - i:
                raise ValueError(f"row {i} must have {m.num_tasks - i} entries")
            for offset, v in enumerate(row):
                m.set(i, i + offset, v)
        return m


def acc_metric(matrix: AccuracyMatrix) -> float:
    """Mean final accuracy: average of a[k, K-1] over all tasks."""
    if not matrix.complete():
        raise ValueError("matrix not complete through the final step")
    K = matrix.num_tasks
    return float(np.mean([matrix.get(k, K - 1) for k in range(K)]))


def fg_metric(matrix: AccuracyMatrix) -> float:
    """Mean maximum accuracy drop from any earlier step to the final step.

    Summands are not clamped at zero, so backward transfer can push the
    value negative. Undefined for a single task.
    """
    if not matrix.complete():
        raise ValueError("matrix not complete through the final step")
    K = matrix.num_tasks
    if K < 2:
        raise ValueError("forgetting is undefined for a single task")
    drops = []
    for k in range(K - 1):
        final = matrix.get(k, K - 1)
        drops.append(max(matrix.get(k, z) - final for z in range(k, K - 1)))
    return float(np.mean(drops))


def stability_plasticity(matrix: AccuracyMatrix) -> tuple[float, float]:
    """(first-task final accuracy, mean final accuracy of the other tasks)."""
    if not matrix.complete():
        raise ValueError("matrix not complete through the final step")
    K = matrix.num_tasks
    if K < 2:
        raise ValueError("split reporting needs at least two tasks")
    first = matrix.get(0, K - 1)
    rest = float(np.mean([matrix.get(k, K - 1) for k in range(1, K)]))
    return first, rest
