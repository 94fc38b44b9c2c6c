"""Low-rank adapter algebra: creation, composition, merging, and accounting.

An adapter on a (d, k) weight site holds B (d, r) and A (r, k) with inner
rank r, so the effective site weight becomes W + scale * (B A) while only
r * (d + k) parameters train. B starts at zero, which keeps a freshly
adapted model functionally identical to the frozen backbone.
"""

from __future__ import annotations

import copy
import math

import torch
from torch import nn

from .backbone import AdapterCombo, Backbone, list_sites
from .errors import ConfigurationError, StateError


class LoraAdapter(nn.Module):
    def __init__(self, site_id: str, shape: tuple[int, int], rank: int, scale: float = 1.0,
                 generator: torch.Generator | None = None, dtype=torch.float32):
        super().__init__()
        d, k = shape
        if rank < 1:
            raise ConfigurationError(f"rank must be >= 1, got {rank}")
        if rank > min(d, k):
            raise ConfigurationError(
                f"rank {rank} exceeds min dimension {min(d, k)} of site {site_id!r} with shape {shape}"
            )
        self.site_id = site_id
        self.rank = rank
        self.scale = float(scale)
        a = torch.randn(rank, k, generator=generator, dtype=dtype) / math.sqrt(k)
        self.A = nn.Parameter(a)
        self.B = nn.Parameter(torch.zeros(d, rank, dtype=dtype))

    @property
    def frozen(self) -> bool:
        return not self.A.requires_grad

    def freeze(self):
        self.A.requires_grad_(False)
        self.B.requires_grad_(False)

    def delta(self) -> torch.Tensor:
        return self.scale * (self.B @ self.A)

    def extra_repr(self) -> str:
        return f"site={self.site_id}, rank={self.rank}, scale={self.scale}"


class AdapterSet(nn.Module):
    """All adapters belonging to one task, keyed by weight-site id."""

    def __init__(self, task_id: int, adapters: dict[str, LoraAdapter]):
        super().__init__()
        self.task_id = task_id
        self._site_ids = list(adapters)
        # ModuleList registers parameters; dict keys may contain dots
        self._adapter_list = nn.ModuleList(adapters.values())

    @property
    def adapters(self) -> dict[str, LoraAdapter]:
        return dict(zip(self._site_ids, self._adapter_list))

    @property
    def site_ids(self) -> list[str]:
        return list(self._site_ids)

    @property
    def frozen(self) -> bool:
        return all(a.frozen for a in self._adapter_list)

    def freeze(self):
        for a in self._adapter_list:
            a.freeze()

    def __len__(self) -> int:
        return len(self._site_ids)


def init_adapter_set(backbone: Backbone, combo, rank: int, scale: float = 1.0,
                     seed: int = 0, task_id: int = 1) -> AdapterSet:
    """Create unfrozen adapters (B = 0, A seeded random) for the selected sites."""
    combo = AdapterCombo.parse(combo)
    sites = list_sites(backbone, combo)
    g = torch.Generator().manual_seed(seed)
    dtype = next(backbone.parameters()).dtype
    adapters = {
        s.site_id: LoraAdapter(s.site_id, s.shape, rank, scale, generator=g, dtype=dtype)
        for s in sites
    }
    return AdapterSet(task_id, adapters)


def adapted_forward(backbone: Backbone, adapter_set: AdapterSet, x: torch.Tensor) -> torch.Tensor:
    """Embedding of x through the backbone with the task's adapters attached."""
    return backbone(x, adapters=adapter_set)


def merge(backbone: Backbone, adapter_set: AdapterSet) -> Backbone:
    """New backbone with every adapted site weight replaced by W + scale * (B A).

    The adapter set must be frozen; merging a still-training adapter is
    forbidden. The original backbone is left untouched.
    """
    if not adapter_set.frozen:
        raise StateError("cannot merge an unfrozen adapter set; freeze it first")
    merged = copy.deepcopy(backbone)
    with torch.no_grad():
        for site_id, adapter in adapter_set.adapters.items():
            merged.site_weight(site_id).add_(adapter.delta())
    return merged


def count_trainable(obj) -> int:
    """Number of scalar parameters that currently require gradients."""
    if hasattr(obj, "parameters"):
        params = obj.parameters()
    else:
        params = obj
    return sum(p.numel() for p in params if p.requires_grad)


def count_all(obj) -> int:
    """Total number of scalar parameters, trainable or not."""
    if hasattr(obj, "parameters"):
        params = obj.parameters()
    else:
        params = obj
    return sum(p.numel() for p in params)


BYTES_PER_PARAM = 4


def image_equivalent_params(height: int, width: int, channels: int = 3) -> float:
    """How many 4-byte parameters fit in the bytes of one stored image."""
    return height * width * channels / BYTES_PER_PARAM


def params_as_images(n_params: int, height: int, width: int, channels: int = 3) -> float:
    """Express a parameter count as a number of stored images of the given size."""
    return n_params * BYTES_PER_PARAM / (height * width * channels)
