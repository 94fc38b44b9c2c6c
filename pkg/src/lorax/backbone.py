"""A small vision transformer with named, individually addressable weight sites.

Each block stores its attention projections either as a split pair (a fused
query-key matrix plus a separate value matrix) or as one fused query-key-value
matrix, together with a learned per-head positional bias added to the
attention logits. Every one of these matrices is a weight site where a
low-rank adapter can attach. The backbone is meant to be frozen after
construction (or after optional pretraining) and shared by all task adapters.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass

import torch
from torch import nn

from .errors import ConfigurationError, InputError


class SiteKind(str, enum.Enum):
    QK = "qk"
    V = "v"
    QKV = "qkv"
    POS = "pos"


class AdapterCombo(str, enum.Enum):
    """Which attention matrices receive adapters."""

    V = "v"
    QK = "qk"
    QKV = "qkv"
    ALL = "all"

    @classmethod
    def parse(cls, value) -> "AdapterCombo":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            valid = ", ".join(c.value for c in cls)
            raise ConfigurationError(f"unknown adapter combo {value!r}; expected one of: {valid}") from None


@dataclass(frozen=True)
class BackboneConfig:
    image_size: int = 32
    patch_size: int = 4
    channels: int = 1
    depth: int = 4
    embed_dim: int = 64
    heads: int = 4
    seed: int = 0
    fused_qkv: bool = False

    def __post_init__(self):
        for name in ("image_size", "patch_size", "channels", "depth", "embed_dim", "heads"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be strictly positive, got {getattr(self, name)}")
        if self.image_size % self.patch_size != 0:
            raise ConfigurationError(
                f"image_size {self.image_size} is not divisible by patch_size {self.patch_size}"
            )
        if self.embed_dim % self.heads != 0:
            raise ConfigurationError(
                f"embed_dim {self.embed_dim} is not divisible by heads {self.heads}"
            )

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def tokens(self) -> int:
        # patch tokens plus the class token
        return self.num_patches + 1

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown backbone config fields: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class WeightSite:
    site_id: str
    kind: SiteKind
    shape: tuple[int, int]


def site_linear(x: torch.Tensor, weight: torch.Tensor, adapter=None) -> torch.Tensor:
    """Apply y = x W^T plus, when an adapter is attached, scale * ((x A^T) B^T).

    The low-rank update stays in factored form so that a zero B leaves the
    base path bitwise untouched.
    """
    y = x @ weight.t()
    if adapter is not None:
        y = y + adapter.scale * ((x @ adapter.A.t()) @ adapter.B.t())
    return y


def site_matrix(weight: torch.Tensor, adapter=None) -> torch.Tensor:
    """Effective site matrix W + scale * (B A)."""
    if adapter is None:
        return weight
    return weight + adapter.scale * (adapter.B @ adapter.A)


class _Attention(nn.Module):
    """Multi-head self-attention with an additive learned positional bias.

    The positional bias is one matrix per block, holding the per-head token
    to token bias stacked along rows: shape (heads * tokens, tokens).
    """

    def __init__(self, dim, heads, tokens, fused, prefix):
        super().__init__()
        self.dim = dim
        self.heads = heads
        self.tokens = tokens
        self.head_dim = dim // heads
        self.fused = fused
        self.prefix = prefix
        if fused:
            self.qkv_weight = nn.Parameter(torch.empty(3 * dim, dim))
        else:
            self.qk_weight = nn.Parameter(torch.empty(2 * dim, dim))
            self.v_weight = nn.Parameter(torch.empty(dim, dim))
        self.pos_bias = nn.Parameter(torch.empty(heads * tokens, tokens))

    def site_entries(self):
        if self.fused:
            yield f"{self.prefix}.qkv", SiteKind.QKV, self.qkv_weight
        else:
            yield f"{self.prefix}.qk", SiteKind.QK, self.qk_weight
            yield f"{self.prefix}.v", SiteKind.V, self.v_weight
        yield f"{self.prefix}.pos", SiteKind.POS, self.pos_bias

    def forward(self, x, deltas):
        b, t, d = x.shape
        if self.fused:
            qkv = site_linear(x, self.qkv_weight, deltas.get(f"{self.prefix}.qkv"))
            q, k, v = qkv.split(d, dim=-1)
        else:
            qk = site_linear(x, self.qk_weight, deltas.get(f"{self.prefix}.qk"))
            q, k = qk.split(d, dim=-1)
            v = site_linear(x, self.v_weight, deltas.get(f"{self.prefix}.v"))
        q = q.view(b, t, self.heads, self.head_dim).transpose(1, 2)
        k = k.view(b, t, self.heads, self.head_dim).transpose(1, 2)
        v = v.view(b, t, self.heads, self.head_dim).transpose(1, 2)
        logits = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        pos = site_matrix(self.pos_bias, deltas.get(f"{self.prefix}.pos"))
        logits = logits + pos.view(self.heads, t, t)
        attn = logits.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, t, d)
        return out


class _Block(nn.Module):
    def __init__(self, dim, heads, tokens, fused, index):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = _Attention(dim, heads, tokens, fused, prefix=f"block{index}.attn")
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, 2 * dim), nn.GELU(), nn.Linear(2 * dim, dim))

    def forward(self, x, deltas):
        x = x + self.attn(self.norm1(x), deltas)
        x = x + self.mlp(self.norm2(x))
        return x


class Backbone(nn.Module):
    """Patch-embedding transformer encoder. Output is the class-token embedding."""

    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config
        dim = config.embed_dim
        tokens = config.tokens
        patch_dim = config.patch_size ** 2 * config.channels
        self.patch_embed = nn.Linear(patch_dim, dim)
        self.cls_token = nn.Parameter(torch.empty(1, 1, dim))
        self.token_pos = nn.Parameter(torch.empty(1, tokens, dim))
        self.blocks = nn.ModuleList(
            [_Block(dim, config.heads, tokens, config.fused_qkv, i) for i in range(config.depth)]
        )
        self.norm = nn.LayerNorm(dim)
        self._frozen = False
        self._init_weights(torch.Generator().manual_seed(config.seed))
        self._site_index = {s.site_id: s for s in self.sites()}

    def _init_weights(self, g: torch.Generator):
        # fan-in scaled init keeps the class-token stream input-dominated,
        # which both full training and frozen-feature probing need
        with torch.no_grad():
            for module in self.modules():
                if isinstance(module, nn.Linear):
                    nn.init.trunc_normal_(module.weight, std=1.0 / math.sqrt(module.in_features), generator=g)
                    nn.init.zeros_(module.bias)
                elif isinstance(module, nn.LayerNorm):
                    nn.init.ones_(module.weight)
                    nn.init.zeros_(module.bias)
                elif isinstance(module, _Attention):
                    for _, kind, w in module.site_entries():
                        std = 0.02 if kind is SiteKind.POS else 1.0 / math.sqrt(w.shape[1])
                        nn.init.trunc_normal_(w, std=std, generator=g)
            nn.init.trunc_normal_(self.cls_token, std=0.02, generator=g)
            nn.init.trunc_normal_(self.token_pos, std=0.02, generator=g)

    @property
    def frozen(self) -> bool:
        return self._frozen

    @property
    def embed_dim(self) -> int:
        return self.config.embed_dim

    def freeze(self) -> "Backbone":
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()
        self._frozen = True
        return self

    def unfreeze(self) -> "Backbone":
        for p in self.parameters():
            p.requires_grad_(True)
        self._frozen = False
        return self

    def sites(self) -> list[WeightSite]:
        out = []
        for block in self.blocks:
            for site_id, kind, w in block.attn.site_entries():
                out.append(WeightSite(site_id, kind, tuple(w.shape)))
        return out

    def site_weight(self, site_id: str) -> torch.Tensor:
        for block in self.blocks:
            for sid, _, w in block.attn.site_entries():
                if sid == site_id:
                    return w
        raise ConfigurationError(f"unknown weight site {site_id!r}")

    def has_site(self, site_id: str) -> bool:
        return site_id in self._site_index

    def list_sites(self, combo) -> list[WeightSite]:
        return list_sites(self, combo)

    def _to_patches(self, images: torch.Tensor) -> torch.Tensor:
        c = self.config.channels
        s = self.config.image_size
        p = self.config.patch_size
        if images.ndim != 4 or images.shape[1] != c or images.shape[2] != s or images.shape[3] != s:
            raise InputError(
                f"expected images shaped (n, {c}, {s}, {s}), got {tuple(images.shape)}"
            )
        n = images.shape[0]
        gp = s // p
        x = images.reshape(n, c, gp, p, gp, p)
        x = x.permute(0, 2, 4, 1, 3, 5).reshape(n, gp * gp, c * p * p)
        return x

    def forward(self, images: torch.Tensor, adapters=None) -> torch.Tensor:
        deltas = _delta_mapping(self, adapters)
        x = self.patch_embed(self._to_patches(images))
        cls = self.cls_token.to(x.dtype).expand(x.shape[0], -1, -1)
        x = torch.cat([cls, x], dim=1) + self.token_pos
        for block in self.blocks:
            x = block(x, deltas)
        x = self.norm(x)
        return x[:, 0]


def _delta_mapping(backbone: Backbone, adapters) -> dict:
    if adapters is None:
        return {}
    mapping = adapters.adapters if hasattr(adapters, "adapters") else dict(adapters)
    for site_id in mapping:
        if not backbone.has_site(site_id):
            raise InputError(f"adapter targets unknown weight site {site_id!r}")
    return mapping


def build_backbone(config: BackboneConfig) -> Backbone:
    """Deterministically construct an unfrozen backbone from a validated config."""
    return Backbone(config)


def list_sites(backbone: Backbone, combo) -> list[WeightSite]:
    """Weight sites selected by an adapter combo, ordered by block index.

    On a backbone with split storage the qkv selector covers the full
    projection through the qk and v sites; on fused storage it is the fused
    matrix per block, and the narrower qk / v selectors are unavailable.
    """
    combo = AdapterCombo.parse(combo)
    sites = backbone.sites()
    fused = backbone.config.fused_qkv
    if combo is AdapterCombo.ALL:
        return sites
    if combo is AdapterCombo.QKV:
        want = {SiteKind.QKV} if fused else {SiteKind.QK, SiteKind.V}
    elif combo is AdapterCombo.QK:
        if fused:
            raise ConfigurationError("qk selection requires split qk/v storage (fused_qkv=False)")
        want = {SiteKind.QK}
    else:  # V
        if fused:
            raise ConfigurationError("v selection requires split qk/v storage (fused_qkv=False)")
        want = {SiteKind.V}
    return [s for s in sites if s.kind in want]
