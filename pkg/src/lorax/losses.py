"""The two-term training objective: classification cross-entropy over all
seen classes plus a weighted diversity cross-entropy over the newest
embedding's head. Batch losses are means, so the diversity weight is
independent of batch size.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import torch
import torch.nn.functional as F

from .errors import ConfigurationError, DataError, StateError


@dataclass(frozen=True)
class LossConfig:
    diversity_weight: float = 0.1
    current_task_classes: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        w = self.diversity_weight
        if not (w >= 0 and w == w and w != float("inf")):
            raise ConfigurationError(f"diversity_weight must be finite and >= 0, got {w}")


def label_indices(labels, class_ids: Sequence[int]) -> torch.Tensor:
    """Positions of global labels in the classifier's class order."""
    index = {int(c): i for i, c in enumerate(class_ids)}
    out = []
    for lbl in (labels.tolist() if hasattr(labels, "tolist") else labels):
        lbl = int(lbl)
        if lbl not in index:
            raise DataError(f"label {lbl} is not among the model's classes")
        out.append(index[lbl])
    return torch.as_tensor(out, dtype=torch.long)


def classification_loss(probabilities: torch.Tensor, labels, class_ids: Sequence[int]) -> torch.Tensor:
    """Mean negative log-probability of the true class."""
    idx = label_indices(labels, class_ids)
    p = probabilities[torch.arange(len(idx)), idx]
    return -(p.log()).mean()


def classification_loss_from_logits(logits: torch.Tensor, target_idx: torch.Tensor) -> torch.Tensor:
    return F.cross_entropy(logits, target_idx)


@dataclass(frozen=True)
class DivTargetMap:
    """Maps global labels to diversity-head targets.

    Labels of the current task map to 1..m in ascending class-id order;
    every other (older) label maps to 0, the shared old-classes bucket.
    """

    index_by_label: Mapping[int, int]

    @property
    def num_targets(self) -> int:
        return len(self.index_by_label) + 1

    def target_index(self, label: int) -> int:
        return self.index_by_label.get(int(label), 0)

    def target_indices(self, labels) -> torch.Tensor:
        seq = labels.tolist() if hasattr(labels, "tolist") else labels
        return torch.as_tensor([self.target_index(l) for l in seq], dtype=torch.long)


def build_div_target_map(current_task_classes: Sequence[int], previous_classes: Sequence[int]) -> DivTargetMap:
    if not previous_classes:
        raise StateError("diversity targets are undefined for the first episode")
    ordered = sorted(int(c) for c in current_task_classes)
    return DivTargetMap({c: i + 1 for i, c in enumerate(ordered)})


def diversity_loss(div_logits: torch.Tensor, labels, target_map: DivTargetMap) -> torch.Tensor:
    """Mean cross-entropy of the diversity head against remapped targets."""
    if div_logits.shape[-1] != target_map.num_targets:
        raise DataError(
            f"diversity logits have width {div_logits.shape[-1]}, expected {target_map.num_targets}"
        )
    return F.cross_entropy(div_logits, target_map.target_indices(labels))


def total_loss(clf: torch.Tensor | float, div: torch.Tensor | float, diversity_weight: float):
    """Weighted sum of the two loss terms."""
    return clf + diversity_weight * div
