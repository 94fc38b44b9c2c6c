"""Exemplar memory with a fixed total budget.

Per class, samples are kept in herding order: step m greedily picks the
unselected sample whose inclusion brings the running mean of the selected
set closest to the class feature mean. Trimming keeps an equal per-class
quota (floor of budget / classes seen) and never reorders, so a smaller
budget always yields a prefix of a larger one.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError


def herd_order(features: np.ndarray) -> list[int]:
    """Greedy herding permutation of the row indices of a feature matrix.

    At each step the candidate minimizing || mu - mean(selected + candidate) ||_2
    is taken, where mu is the mean over all rows; ties break to the lowest index.
    """
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] == 0:
        raise DataError("herding needs a non-empty 2-D feature matrix")
    n = feats.shape[0]
    mu = feats.mean(axis=0)
    order: list[int] = []
    selected_sum = np.zeros_like(mu)
    remaining = np.ones(n, dtype=bool)
    for m in range(n):
        cand_means = (selected_sum + feats[remaining]) / (m + 1)
        dists = np.linalg.norm(cand_means - mu, axis=1)
        # exact mathematical ties can differ across summation orders by a few
        # ulps; a tolerance band keeps "lowest index wins" deterministic
        best = dists.min()
        pick_rel = int(np.flatnonzero(dists <= best + 1e-9 * (1.0 + best))[0])
        pick = np.flatnonzero(remaining)[pick_rel]
        order.append(int(pick))
        selected_sum += feats[pick]
        remaining[pick] = False
    return order


class ExemplarBuffer:
    """Budgeted memory of past samples with per-class herding order."""

    def __init__(self, budget: int, feature_fn=None):
        if budget < 0:
            raise DataError(f"budget must be >= 0, got {budget}")
        self.budget = int(budget)
        self.feature_fn = feature_fn
        self._images: dict[int, list[np.ndarray]] = {}
        self._refs: dict[int, list[str]] = {}

    @property
    def classes(self) -> list[int]:
        return list(self._images)

    def count(self, class_id: int) -> int:
        return len(self._images.get(class_id, []))

    def total(self) -> int:
        return sum(len(v) for v in self._images.values())

    def update(self, images, labels, classes, feature_fn=None, refs=None):
        """Add the given classes' samples in herding order, then trim to budget."""
        fn = feature_fn or self.feature_fn
        if fn is None:
            raise DataError("no feature function available for herding")
        labels = np.asarray(labels)
        new_classes = sorted(int(c) for c in classes)
        overlap = set(new_classes) & set(self._images)
        if overlap:
            raise DataError(f"classes already stored in the buffer: {sorted(overlap)}")
        images = np.asarray(images)
        for c in new_classes:
            idx = np.flatnonzero(labels == c)
            if len(idx) == 0:
                raise DataError(f"no samples available for class {c}")
            feats = np.asarray(fn(images[idx]))
            order = herd_order(feats)
            self._images[c] = [images[idx[j]].copy() for j in order]
            self._refs[c] = [refs[idx[j]] if refs is not None else f"class{c}:{int(idx[j])}" for j in order]
        self.trim_to_budget()

    def trim_to_budget(self):
        n_classes = len(self._images)
        if n_classes == 0:
            return
        quota = self.budget // n_classes
        for c in self._images:
            self._images[c] = self._images[c][:quota]
            self._refs[c] = self._refs[c][:quota]

    def as_training_data(self):
        """All stored samples and labels, classes in ascending id order."""
        imgs, labels = [], []
        for c in sorted(self._images):
            for img in self._images[c]:
                imgs.append(img)
                labels.append(c)
        if not imgs:
            return None, None
        return np.stack(imgs), np.asarray(labels, dtype=np.int64)

    def manifest(self) -> dict:
        """Serializable record: class id to sample refs in kept herding order."""
        return {str(c): list(self._refs[c]) for c in sorted(self._refs)}


def training_set(buffer: ExemplarBuffer | None, images, labels):
    """Current task data joined with everything in the exemplar buffer."""
    images = np.asarray(images)
    labels = np.asarray(labels, dtype=np.int64)
    if buffer is None or buffer.total() == 0:
        return images, labels
    mem_images, mem_labels = buffer.as_training_data()
    return np.concatenate([images, mem_images]), np.concatenate([labels, mem_labels])
