"""Per-task feature extractors, the growing unified classifier, and the
per-episode diversity head.

The model keeps one extractor per task. Embeddings of all extractors are
concatenated in ascending task order into a single super-feature, which the
unified classifier maps to logits over every class seen so far. While a task
is training, a temporary diversity head reads only the newest extractor's
embedding and predicts the current task's classes plus one bucket standing
for everything older; it is dropped when the episode ends.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
import torch
from torch import nn

from .backbone import Backbone, BackboneConfig, build_backbone
from .errors import DataError, StateError
from .lora import AdapterSet, count_all, init_adapter_set


class AdapterExtractor:
    """Frozen shared backbone plus one task's adapter set."""

    def __init__(self, backbone: Backbone, adapter_set: AdapterSet, task_id: int):
        self.backbone = backbone
        self.adapter_set = adapter_set
        self.task_id = task_id
        self.out_dim = backbone.embed_dim

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        return self.backbone(x, adapters=self.adapter_set)

    @property
    def frozen(self) -> bool:
        return self.adapter_set.frozen

    def freeze(self):
        self.adapter_set.freeze()

    def trainable_modules(self):
        return [self.adapter_set]

    def parameters(self):
        return self.adapter_set.parameters()


class BackboneExtractor:
    """A full trainable backbone owned by one task (full-rank expansion)."""

    def __init__(self, net: Backbone, task_id: int):
        self.net = net
        self.task_id = task_id
        self.out_dim = net.embed_dim

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)

    @property
    def frozen(self) -> bool:
        return self.net.frozen

    def freeze(self):
        self.net.freeze()

    def trainable_modules(self):
        return [self.net]

    def parameters(self):
        return self.net.parameters()


class ExpandingClassifier(nn.Module):
    """Linear head whose weight grows with classes and input width.

    On expansion the previous weight block and biases are copied bit-exactly
    into the top-left corner; new rows and columns get small seeded uniform
    values and zero biases.
    """

    def __init__(self):
        super().__init__()
        self.weight: nn.Parameter | None = None
        self.bias: nn.Parameter | None = None
        self.class_ids: list[int] = []

    @property
    def n_classes(self) -> int:
        return len(self.class_ids)

    @property
    def in_dim(self) -> int:
        return 0 if self.weight is None else self.weight.shape[1]

    def expand(self, new_class_ids, in_dim: int, generator: torch.Generator, dtype=None):
        new_ids = list(new_class_ids)
        overlap = set(new_ids) & set(self.class_ids)
        if overlap:
            raise DataError(f"classes already present in the classifier: {sorted(overlap)}")
        old_w, old_b = self.weight, self.bias
        n_out = len(self.class_ids) + len(new_ids)
        if old_w is not None and in_dim < old_w.shape[1]:
            raise StateError("classifier input width cannot shrink")
        dtype = dtype or (old_w.dtype if old_w is not None else torch.float32)
        # keep new entries an order of magnitude below the usual fan-in scale:
        # inherited rows then still score old classes correctly right after
        # expansion, which few exemplars could not re-teach from scratch
        bound = 0.1 / math.sqrt(in_dim)
        w = torch.empty(n_out, in_dim, dtype=dtype).uniform_(-bound, bound, generator=generator)
        b = torch.zeros(n_out, dtype=dtype)
        if old_w is not None:
            with torch.no_grad():
                w[: old_w.shape[0], : old_w.shape[1]] = old_w.detach()
                b[: old_b.shape[0]] = old_b.detach()
        self.weight = nn.Parameter(w)
        self.bias = nn.Parameter(b)
        self.class_ids = self.class_ids + new_ids

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        if self.weight is None:
            raise StateError("classifier has no classes yet")
        return torch.nn.functional.linear(features, self.weight, self.bias)


class DiversityHead(nn.Module):
    """Linear head over the newest embedding: current classes plus one old bucket.

    Output index 0 is the bucket for all previously seen classes; indices
    1..m are the current task's classes in ascending class-id order.
    """

    def __init__(self, n_outputs: int, in_dim: int, generator: torch.Generator, dtype=torch.float32):
        super().__init__()
        bound = 1.0 / math.sqrt(in_dim)
        w = torch.empty(n_outputs, in_dim, dtype=dtype).uniform_(-bound, bound, generator=generator)
        self.weight = nn.Parameter(w)
        self.bias = nn.Parameter(torch.zeros(n_outputs, dtype=dtype))

    def forward(self, embedding: torch.Tensor) -> torch.Tensor:
        return torch.nn.functional.linear(embedding, self.weight, self.bias)


class ExpandingNetwork:
    """Registry of per-task extractors with a shared growing classifier."""

    def __init__(self, embed_dim: int, dtype=torch.float32):
        self.embed_dim = embed_dim
        self.dtype = dtype
        self.extractors: list = []
        self.classifier = ExpandingClassifier()
        self.div_head: DiversityHead | None = None
        self.task_class_ids: list[list[int]] = []

    @property
    def n_tasks(self) -> int:
        return len(self.extractors)

    @property
    def class_ids(self) -> list[int]:
        return list(self.classifier.class_ids)

    @property
    def current_task_classes(self) -> list[int]:
        if not self.task_class_ids:
            raise StateError("no task registered yet")
        return list(self.task_class_ids[-1])

    def register_task(self, extractor, new_class_ids, seed: int):
        if self.extractors and not self.extractors[-1].frozen:
            raise StateError("previous task's extractor is not frozen yet")
        new_ids = sorted(int(c) for c in new_class_ids)
        if len(set(new_ids)) != len(new_ids):
            raise DataError("duplicate class ids within a task")
        overlap = set(new_ids) & set(self.classifier.class_ids)
        if overlap:
            raise DataError(f"classes overlap earlier tasks: {sorted(overlap)}")
        self.extractors.append(extractor)
        self.task_class_ids.append(new_ids)
        g = torch.Generator().manual_seed(seed)
        self.classifier.expand(new_ids, in_dim=self.n_tasks * self.embed_dim, generator=g,
                               dtype=self.dtype)
        if self.n_tasks >= 2:
            self.div_head = DiversityHead(len(new_ids) + 1, self.embed_dim, generator=g,
                                          dtype=self.dtype)
        else:
            self.div_head = None

    def task_embedding(self, task_index: int, x: torch.Tensor) -> torch.Tensor:
        return self.extractors[task_index].embed(x)

    def super_feature(self, x: torch.Tensor) -> torch.Tensor:
        if not self.extractors:
            raise StateError("no extractors registered")
        return torch.cat([ex.embed(x) for ex in self.extractors], dim=-1)

    def logits(self, x: torch.Tensor) -> torch.Tensor:
        return self.classifier(self.super_feature(x))

    def logits_from_parts(self, old_features: torch.Tensor | None, new_embedding: torch.Tensor) -> torch.Tensor:
        if old_features is None:
            return self.classifier(new_embedding)
        return self.classifier(torch.cat([old_features, new_embedding], dim=-1))

    def predict_proba(self, x: torch.Tensor) -> torch.Tensor:
        return self.logits(x).softmax(dim=-1)

    def classify(self, x: torch.Tensor) -> np.ndarray:
        """Global class labels, ties broken by lowest class index."""
        with torch.no_grad():
            probs = self.predict_proba(x).cpu().numpy()
        ids = np.asarray(self.class_ids)
        return ids[np.argmax(probs, axis=1)]

    def div_logits(self, x: torch.Tensor) -> torch.Tensor:
        if self.div_head is None:
            raise StateError("diversity head only exists while training task 2 or later")
        return self.div_head(self.extractors[-1].embed(x))

    def div_logits_from_embedding(self, new_embedding: torch.Tensor) -> torch.Tensor:
        if self.div_head is None:
            raise StateError("diversity head only exists while training task 2 or later")
        return self.div_head(new_embedding)

    def end_episode(self):
        if not self.extractors:
            raise StateError("no episode to end")
        self.extractors[-1].freeze()
        self.div_head = None

    def trainable_modules(self) -> list[nn.Module]:
        mods: list[nn.Module] = []
        if self.extractors and not self.extractors[-1].frozen:
            mods.extend(self.extractors[-1].trainable_modules())
        mods.append(self.classifier)
        if self.div_head is not None:
            mods.append(self.div_head)
        return mods

    def trainable_parameters(self):
        for m in self.trainable_modules():
            yield from (p for p in m.parameters() if p.requires_grad)

    def parameters(self):
        for ex in self.extractors:
            yield from ex.parameters()
        yield from self.classifier.parameters()
        if self.div_head is not None:
            yield from self.div_head.parameters()


class LoraxNetwork(ExpandingNetwork):
    """Expanding network whose extractors are adapter sets over one frozen backbone."""

    def __init__(self, backbone: Backbone):
        super().__init__(backbone.embed_dim, dtype=next(backbone.parameters()).dtype)
        self.backbone = backbone.freeze()

    def add_task(self, new_class_ids, rank: int, combo, scale: float = 1.0, seed: int = 0):
        task_id = self.n_tasks + 1
        adapters = init_adapter_set(self.backbone, combo, rank, scale, seed=seed, task_id=task_id)
        self.register_task(AdapterExtractor(self.backbone, adapters, task_id), new_class_ids, seed=seed)

    def parameters(self):
        yield from self.backbone.parameters()
        yield from super().parameters()

    def total_parameter_count(self) -> int:
        return count_all(self.backbone) + sum(count_all(ex.adapter_set) for ex in self.extractors) \
            + count_all(self.classifier)


class FullRankNetwork(ExpandingNetwork):
    """Expanding network that grows a whole new trainable backbone per task."""

    def __init__(self, config: BackboneConfig):
        super().__init__(config.embed_dim)
        self.backbone_config = config

    def add_task(self, new_class_ids, seed: int = 0):
        task_id = self.n_tasks + 1
        cfg = dataclasses.replace(self.backbone_config, seed=seed)
        net = build_backbone(cfg)
        self.register_task(BackboneExtractor(net, task_id), new_class_ids, seed=seed)

    def total_parameter_count(self) -> int:
        return sum(count_all(ex.net) for ex in self.extractors) + count_all(self.classifier)
