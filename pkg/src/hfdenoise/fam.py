"""Frequency-aware multi-scale feature loss.

Two twin encoders read the ``[LH, HL, HH]`` detail stack.  The online
encoder sees the clean image's details, the target encoder (an EMA copy,
never stepped by an optimizer) sees the network output's details.  Each of
the three feature scales is cut into a ``G x G`` patch grid; for every
anchor patch the ``top_k`` most similar 8-connected neighbours (cosine
similarity on the online features) are pooled, passed through a per-scale
MLP head, and the squared distance between the online and target vectors
is averaged over anchors and scales.

Two code paths exist: a patch-list API (:func:`split_patches`,
:func:`select_positive_set`, :func:`aggregate`) that works on explicit
grid coordinates, and the batched tensor path used by :func:`fam_loss`.
"""
from __future__ import annotations

import copy
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, EmptyPositiveSet, IndivisibleGrid, ShapeError, ShapeMismatch

DEGENERATE_NORM = 1e-12
NEIGHBOR_OFFSETS = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


@dataclass(frozen=True)
class EncoderConfig:
    stage_channels: Tuple[int, int, int] = (32, 64, 128)
    patch_grid: int = 8
    top_k: int = 4
    mlp_hidden: Optional[int] = None
    attention_kernel: int = 7
    in_channels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "stage_channels", tuple(int(c) for c in self.stage_channels))
        if len(self.stage_channels) != 3 or min(self.stage_channels) < 1:
            raise ConfigError("encoder.stage_channels must be three positive integers")
        if self.patch_grid < 1:
            raise ConfigError("encoder.patch_grid must be positive")
        if not 1 <= self.top_k <= len(NEIGHBOR_OFFSETS):
            raise ConfigError("encoder.top_k must lie in [1, 8]")
        if self.mlp_hidden is not None and self.mlp_hidden < 1:
            raise ConfigError("encoder.mlp_hidden must be positive")
        if self.attention_kernel < 1 or self.attention_kernel % 2 == 0:
            raise ConfigError("encoder.attention_kernel must be a positive odd integer")

    @property
    def input_divisor(self) -> int:
        """Detail-stack dims must be a multiple of this."""
        return 4 * self.patch_grid

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stage_channels"] = list(self.stage_channels)
        return d


class FreqAttention(nn.Module):
    """Spatial attention from channel-wise max and mean maps."""

    def __init__(self, kernel_size: int = 7):
        super().__init__()
        self.conv = nn.Conv2d(2, 1, kernel_size, padding=kernel_size // 2)

    def attention_map(self, f: torch.Tensor) -> torch.Tensor:
        pooled = torch.cat([f.amax(dim=1, keepdim=True), f.mean(dim=1, keepdim=True)], dim=1)
        return torch.sigmoid(self.conv(pooled))

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        return f * self.attention_map(f)


def freq_attention(f: torch.Tensor, module: FreqAttention) -> torch.Tensor:
    if f.ndim != 4 or f.shape[1] < 1:
        raise ShapeError(f"expected a (B, C>=1, H, W) feature map, got {tuple(f.shape)}")
    return module(f)


def _mlp(channels: int, hidden: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(channels, hidden), nn.ReLU(), nn.Linear(hidden, channels))


class Encoder(nn.Module):
    """Three conv stages (strides 1, 2, 4), each followed by attention.

    ``heads`` holds one projection MLP per scale; it belongs to the encoder
    so the EMA copy tracks it together with the convolutions.
    """

    def __init__(self, config: EncoderConfig = EncoderConfig()):
        super().__init__()
        self.config = config
        stages, attn, heads = [], [], []
        prev = config.in_channels
        for n, ch in enumerate(config.stage_channels):
            stages.append(nn.Conv2d(prev, ch, 3, stride=1 if n == 0 else 2, padding=1))
            attn.append(FreqAttention(config.attention_kernel))
            heads.append(_mlp(ch, config.mlp_hidden or ch))
            prev = ch
        self.stages = nn.ModuleList(stages)
        self.attention = nn.ModuleList(attn)
        self.heads = nn.ModuleList(heads)

    def forward(self, hf: torch.Tensor) -> List[torch.Tensor]:
        if hf.ndim != 4 or hf.shape[1] != self.config.in_channels:
            raise ShapeError(f"expected a (B, {self.config.in_channels}, H, W) stack, got {tuple(hf.shape)}")
        d = self.config.input_divisor
        if hf.shape[-2] % d or hf.shape[-1] % d:
            raise ShapeError(
                f"detail-stack dims must be divisible by 4 * patch_grid = {d}, got {tuple(hf.shape[-2:])}"
            )
        feats, h = [], hf
        for conv, att in zip(self.stages, self.attention):
            h = att(F.relu(conv(h)))
            feats.append(h)
        return feats


def encode(encoder: Encoder, hf: torch.Tensor) -> List[torch.Tensor]:
    return encoder(hf)


class EncoderPair(nn.Module):
    """Online encoder plus its EMA target copy."""

    def __init__(self, config: EncoderConfig = EncoderConfig(), momentum: float = 0.99):
        super().__init__()
        if not 0.0 <= momentum <= 1.0:
            raise ConfigError("ema momentum must lie in [0, 1]")
        self.config = config
        self.momentum = float(momentum)
        self.online = Encoder(config)
        self.target = copy.deepcopy(self.online)
        for p in self.target.parameters():
            p.requires_grad_(False)

    @torch.no_grad()
    def ema_update(self) -> None:
        m = self.momentum
        for t, o in zip(self.target.parameters(), self.online.parameters()):
            t.mul_(m).add_(o.detach(), alpha=1.0 - m)


def ema_update(pair: EncoderPair) -> EncoderPair:
    pair.ema_update()
    return pair


@contextmanager
def frozen(*modules: nn.Module):
    """Temporarily disable gradients for the parameters of ``modules``."""
    saved = [(p, p.requires_grad) for m in modules for p in m.parameters()]
    for p, _ in saved:
        p.requires_grad_(False)
    try:
        yield
    finally:
        for p, flag in saved:
            p.requires_grad_(flag)


# -- patch-list API -----------------------------------------------------------


@dataclass
class Patch:
    row: int
    col: int
    data: torch.Tensor = field(repr=False)


def split_patches(f: torch.Tensor, grid: int) -> List[Patch]:
    """Cut a ``(C, H, W)`` map into ``grid x grid`` patches in row-major order."""
    if f.ndim != 3:
        raise ShapeError(f"expected a (C, H, W) feature map, got {tuple(f.shape)}")
    _, h, w = f.shape
    if h % grid or w % grid:
        raise IndivisibleGrid(f"feature map {h}x{w} is not divisible into a {grid}x{grid} grid")
    ph, pw = h // grid, w // grid
    return [
        Patch(r, c, f[:, r * ph:(r + 1) * ph, c * pw:(c + 1) * pw])
        for r in range(grid)
        for c in range(grid)
    ]


def merge_patches(patches: Sequence[Patch]) -> torch.Tensor:
    grid = max(p.row for p in patches) + 1
    rows = []
    by_pos = {(p.row, p.col): p.data for p in patches}
    for r in range(grid):
        rows.append(torch.cat([by_pos[(r, c)] for c in range(grid)], dim=-1))
    return torch.cat(rows, dim=-2)


def cosine_sim(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Cosine similarity of flattened tensors; 0 when either is (near) zero."""
    a = a.reshape(-1)
    b = b.reshape(-1)
    na, nb = a.norm(), b.norm()
    if na < DEGENERATE_NORM or nb < DEGENERATE_NORM:
        return torch.zeros((), dtype=a.dtype)
    return (a @ b) / (na * nb)


def select_positive_set(patches: Sequence[Patch], anchor: int, top_k: int = 4) -> List[int]:
    """Storage indices of the ``top_k`` neighbours most similar to ``patches[anchor]``.

    Candidates are the 8-connected grid neighbours of the anchor.  Ties go to
    the lower row-major grid index.
    """
    grid = max(max(p.row, p.col) for p in patches) + 1
    where = {(p.row, p.col): k for k, p in enumerate(patches)}
    a = patches[anchor]
    cands = []
    for dr, dc in NEIGHBOR_OFFSETS:
        r, c = a.row + dr, a.col + dc
        if 0 <= r < grid and 0 <= c < grid and (r, c) in where:
            j = where[(r, c)]
            sim = float(cosine_sim(a.data.detach(), patches[j].data.detach()))
            cands.append((-sim, r * grid + c, j))
    cands.sort()
    return [j for _, _, j in cands[:top_k]]


def aggregate(patches: Sequence[Patch], positives: Sequence[int], head: nn.Module) -> torch.Tensor:
    """GAP each positive patch, average the vectors, project with ``head``."""
    if len(positives) == 0:
        raise EmptyPositiveSet("aggregate needs at least one positive patch")
    pooled = torch.stack([patches[j].data.mean(dim=(-2, -1)) for j in positives]).mean(dim=0)
    return head(pooled)


def patch_list_loss(online_feats, target_feats, online_heads, target_heads, grid, top_k,
                    order: Optional[Sequence[int]] = None) -> torch.Tensor:
    """Loss for a single sample computed through the patch-list API.

    ``online_feats``/``target_feats`` are per-scale ``(C, H, W)`` maps.
    ``order`` optionally permutes patch storage (coordinates are kept).
    """
    terms = []
    for fo, ft, ho, ht in zip(online_feats, target_feats, online_heads, target_heads):
        po, pt = split_patches(fo, grid), split_patches(ft, grid)
        if order is not None:
            po = [po[k] for k in order]
            pt = [pt[k] for k in order]
        for i in range(len(po)):
            pos = select_positive_set(po, i, top_k)
            g = aggregate(po, pos, ho)
            g_t = aggregate(pt, pos, ht)
            terms.append(((g - g_t) ** 2).sum())
    return torch.stack(terms).mean()


# -- batched path -------------------------------------------------------------


def _patch_vectors(f: torch.Tensor, grid: int) -> torch.Tensor:
    b, c, h, w = f.shape
    if h % grid or w % grid:
        raise IndivisibleGrid(f"feature map {h}x{w} is not divisible into a {grid}x{grid} grid")
    ph, pw = h // grid, w // grid
    v = f.reshape(b, c, grid, ph, grid, pw).permute(0, 2, 4, 1, 3, 5)
    return v.reshape(b, grid, grid, c * ph * pw)


def _patch_gap(f: torch.Tensor, grid: int) -> torch.Tensor:
    b, c, h, w = f.shape
    g = f.reshape(b, c, grid, h // grid, grid, w // grid).mean(dim=(3, 5))
    return g.permute(0, 2, 3, 1).reshape(b, grid * grid, c)


@torch.no_grad()
def neighbor_similarity(f: torch.Tensor, grid: int) -> torch.Tensor:
    """``(B, G*G, 8)`` cosine similarities to each neighbour offset; -inf off-grid."""
    v = _patch_vectors(f, grid)
    norm = v.norm(dim=-1)
    b = v.shape[0]
    sims = torch.full((b, grid, grid, len(NEIGHBOR_OFFSETS)), float("-inf"), dtype=v.dtype)
    for k, (dr, dc) in enumerate(NEIGHBOR_OFFSETS):
        r0, r1 = max(0, -dr), grid - max(0, dr)
        c0, c1 = max(0, -dc), grid - max(0, dc)
        if r0 >= r1 or c0 >= c1:
            continue
        a = v[:, r0:r1, c0:c1]
        n = v[:, r0 + dr:r1 + dr, c0 + dc:c1 + dc]
        na, nn_ = norm[:, r0:r1, c0:c1], norm[:, r0 + dr:r1 + dr, c0 + dc:c1 + dc]
        dot = (a * n).sum(-1)
        ok = (na >= DEGENERATE_NORM) & (nn_ >= DEGENERATE_NORM)
        s = torch.where(ok, dot / torch.where(ok, na * nn_, torch.ones_like(dot)), torch.zeros_like(dot))
        sims[:, r0:r1, c0:c1, k] = s
    return sims.reshape(b, grid * grid, len(NEIGHBOR_OFFSETS))


@torch.no_grad()
def positive_weights(f: torch.Tensor, grid: int, top_k: int) -> torch.Tensor:
    """Row-stochastic ``(B, N, N)`` matrix averaging each anchor's positive set."""
    sims = neighbor_similarity(f, grid)
    b, n, _ = sims.shape
    # offsets are listed in increasing neighbour index, so a stable sort breaks ties by index
    order = torch.sort(sims, dim=-1, descending=True, stable=True).indices[..., :top_k]
    picked = torch.gather(sims, -1, order)
    valid = torch.isfinite(picked)
    rows = torch.arange(n) // grid
    cols = torch.arange(n) % grid
    dr = torch.tensor([o[0] for o in NEIGHBOR_OFFSETS])
    dc = torch.tensor([o[1] for o in NEIGHBOR_OFFSETS])
    nbr = (rows[:, None] + dr[None, :]) * grid + (cols[:, None] + dc[None, :])
    nbr = nbr.clamp(0, n - 1)
    idx = torch.gather(nbr.expand(b, n, -1), -1, order)
    w = torch.zeros(b, n, n, dtype=f.dtype)
    w.scatter_add_(-1, idx, valid.to(f.dtype))
    return w / w.sum(-1, keepdim=True).clamp_min(1.0)


def positive_sets(f: torch.Tensor, grid: int, top_k: int) -> List[List[List[int]]]:
    """Positive index sets from the batched path, for inspection and tests."""
    w = positive_weights(f, grid, top_k)
    return [[torch.nonzero(row).flatten().tolist() for row in sample] for sample in w]


def fam_loss_from_features(online_feats, target_feats, online_heads, target_heads,
                           grid: int, top_k: int) -> torch.Tensor:
    """Batched loss given per-scale ``(B, C, H, W)`` features of both streams."""
    per_scale = []
    for fo, ft, ho, ht in zip(online_feats, target_feats, online_heads, target_heads):
        if fo.shape != ft.shape:
            raise ShapeMismatch(f"feature shapes differ: {tuple(fo.shape)} vs {tuple(ft.shape)}")
        w = positive_weights(fo.detach(), grid, top_k)
        g = ho(torch.bmm(w, _patch_gap(fo, grid)))
        g_t = ht(torch.bmm(w, _patch_gap(ft, grid)))
        per_scale.append(((g - g_t) ** 2).sum(-1).mean())
    return torch.stack(per_scale).mean()


def fam_loss(pair: EncoderPair, hf_x: torch.Tensor, hf_y: torch.Tensor) -> torch.Tensor:
    """Feature loss between clean details ``hf_x`` (online) and output details ``hf_y`` (target)."""
    if hf_x.shape != hf_y.shape:
        raise ShapeMismatch(f"detail stacks differ: {tuple(hf_x.shape)} vs {tuple(hf_y.shape)}")
    cfg = pair.config
    fo = pair.online(hf_x)
    ft = pair.target(hf_y)
    return fam_loss_from_features(fo, ft, pair.online.heads, pair.target.heads, cfg.patch_grid, cfg.top_k)


def fam_star_loss(pair: EncoderPair, hf_x: torch.Tensor, hf_y: torch.Tensor) -> torch.Tensor:
    """Ablation: plain feature MSE per scale, scales weighted equally."""
    if hf_x.shape != hf_y.shape:
        raise ShapeMismatch(f"detail stacks differ: {tuple(hf_x.shape)} vs {tuple(hf_y.shape)}")
    fo = pair.online(hf_x)
    ft = pair.target(hf_y)
    return torch.stack([F.mse_loss(a, b) for a, b in zip(fo, ft)]).mean()
