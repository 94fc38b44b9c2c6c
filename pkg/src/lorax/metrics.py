"""Continual-learning evaluation: the task-by-episode accuracy matrix, the
three summary metrics derived from it, and the multi-real correctness rule
that never penalizes confusion between authentic classes.

Matrix entries are stored as exact correct/total sample counts where
available, so repeated runs serialize identically.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .errors import DataError, UndefinedMetricError


@dataclass(frozen=True)
class MultiRealMap:
    """The set of global class ids flagged as authentic."""

    authentic_ids: frozenset[int]

    @classmethod
    def from_tasks(cls, tasks) -> "MultiRealMap":
        ids = set()
        for t in tasks:
            for c in t.classes:
                if c.authentic:
                    ids.add(int(c.class_id))
        return cls(frozenset(ids))


def multi_real_correct(pred: int, truth: int, mmap: MultiRealMap) -> bool:
    """Exact match, or both labels authentic."""
    if int(pred) == int(truth):
        return True
    return int(pred) in mmap.authentic_ids and int(truth) in mmap.authentic_ids


class AccuracyMatrix:
    """n x n matrix; entry (i, j) is task i's accuracy after episode j (0-based).

    Entries are defined only for j >= i. Where counts were supplied the float
    value is the exact ratio correct / total.
    """

    def __init__(self, n: int):
        if n < 1:
            raise DataError(f"matrix needs n >= 1 tasks, got {n}")
        self.n = n
        self._values = np.full((n, n), np.nan)
        self._counts: dict[tuple[int, int], tuple[int, int]] = {}

    @classmethod
    def from_values(cls, values) -> "AccuracyMatrix":
        arr = np.asarray(values, dtype=float)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise DataError(f"expected a square matrix, got shape {arr.shape}")
        m = cls(arr.shape[0])
        for i in range(m.n):
            for j in range(m.n):
                if j >= i and not np.isnan(arr[i, j]):
                    m.set_value(i, j, float(arr[i, j]))
        return m

    def _check_index(self, task: int, episode: int):
        if not (0 <= task < self.n and 0 <= episode < self.n):
            raise DataError(f"index ({task}, {episode}) outside a {self.n}x{self.n} matrix")
        if episode < task:
            raise DataError(f"entry ({task}, {episode}) is undefined: episode precedes task")

    def set_counts(self, task: int, episode: int, correct: int, total: int):
        self._check_index(task, episode)
        if total <= 0 or correct < 0 or correct > total:
            raise DataError(f"bad counts {correct}/{total}")
        self._counts[(task, episode)] = (int(correct), int(total))
        self._values[task, episode] = correct / total

    def set_value(self, task: int, episode: int, value: float):
        self._check_index(task, episode)
        if not (0.0 <= value <= 1.0):
            raise DataError(f"accuracy {value} outside [0, 1]")
        self._values[task, episode] = value

    def value(self, task: int, episode: int) -> float:
        self._check_index(task, episode)
        v = self._values[task, episode]
        if np.isnan(v):
            raise DataError(f"entry ({task}, {episode}) was never filled")
        return float(v)

    def counts(self, task: int, episode: int):
        return self._counts.get((task, episode))

    def defined(self, task: int, episode: int) -> bool:
        return episode >= task and not np.isnan(self._values[task, episode])

    @property
    def values(self) -> np.ndarray:
        return self._values.copy()

    def is_complete(self) -> bool:
        return all(self.defined(i, j) for i in range(self.n) for j in range(i, self.n))

    def to_csv(self) -> str:
        """Rows are tasks, columns episodes; undefined cells stay blank."""
        buf = io.StringIO()
        header = ["task"] + [f"episode_{j + 1}" for j in range(self.n)]
        buf.write(",".join(header) + "\n")
        for i in range(self.n):
            row = [str(i + 1)]
            for j in range(self.n):
                row.append(repr(float(self._values[i, j])) if self.defined(i, j) else "")
            buf.write(",".join(row) + "\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "AccuracyMatrix":
        lines = [ln for ln in text.strip().splitlines() if ln.strip()]
        if len(lines) < 2:
            raise DataError("matrix csv has no rows")
        n = len(lines) - 1
        m = cls(n)
        for i, line in enumerate(lines[1:]):
            cells = line.split(",")
            if len(cells) != n + 1:
                raise DataError(f"row {i + 1} has {len(cells) - 1} cells, expected {n}")
            for j, cell in enumerate(cells[1:]):
                if cell.strip():
                    m.set_value(i, j, float(cell))
        return m


def _as_matrix(matrix) -> AccuracyMatrix:
    if isinstance(matrix, AccuracyMatrix):
        return matrix
    return AccuracyMatrix.from_values(matrix)


def _require_complete(m: AccuracyMatrix):
    if not m.is_complete():
        raise DataError("accuracy matrix has undefined entries for some task/episode pairs")


def average_accuracy(matrix) -> float:
    """Mean over episodes of the mean accuracy across the tasks seen so far."""
    m = _as_matrix(matrix)
    _require_complete(m)
    per_episode = [
        sum(m.value(i, j) for i in range(j + 1)) / (j + 1) for j in range(m.n)
    ]
    return sum(per_episode) / m.n


def average_accuracy_final(matrix) -> float:
    """Mean accuracy over all tasks at the final episode."""
    m = _as_matrix(matrix)
    _require_complete(m)
    last = m.n - 1
    return sum(m.value(i, last) for i in range(m.n)) / m.n


def backward_transfer(matrix) -> float:
    """Mean of final-minus-diagonal accuracy over all but the last task."""
    m = _as_matrix(matrix)
    if m.n < 2:
        raise UndefinedMetricError("backward transfer needs at least 2 tasks")
    _require_complete(m)
    last = m.n - 1
    return sum(m.value(i, last) - m.value(i, i) for i in range(m.n - 1)) / (m.n - 1)


def metrics_summary(matrix) -> dict:
    """Flat summary {AA, AAF, BWT, n}; BWT is None for a single task."""
    m = _as_matrix(matrix)
    return {
        "AA": average_accuracy(m),
        "AAF": average_accuracy_final(m),
        "BWT": backward_transfer(m) if m.n >= 2 else None,
        "n": m.n,
    }


def task_accuracy_counts(predict_fn, images, labels, mmap: MultiRealMap) -> tuple[int, int]:
    """Correct/total under the multi-real rule for one task's test set."""
    preds = np.asarray(predict_fn(images))
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise DataError(f"got {preds.shape} predictions for {labels.shape} labels")
    correct = sum(multi_real_correct(p, t, mmap) for p, t in zip(preds, labels))
    return int(correct), int(len(labels))


def task_accuracy(predict_fn, images, labels, mmap: MultiRealMap) -> float:
    correct, total = task_accuracy_counts(predict_fn, images, labels, mmap)
    return correct / total
