"""Single-level orthonormal 2D Haar transform.

Convention: the first subband letter is the filter applied along each row
(horizontal direction), the second the filter applied along each column.
With ``L = [1, 1]/sqrt(2)`` and ``H = [-1, 1]/sqrt(2)``, a 2x2 block::

    a b
    c d

maps to::

    LL = (a + b + c + d) / 2
    LH = (c + d - a - b) / 2     row-low, column-high  (horizontal details)
    HL = (b - a + d - c) / 2     row-high, column-low  (vertical details)
    HH = (a - b - c + d) / 2

The numpy functions validate inputs; the ``*_torch`` variants operate on
batched tensors ``(..., H, W)`` and are differentiable.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
import torch

from .errors import ShapeMismatch
from .image import Image, as_array, check_haar_compatible

BANDS = ("ll", "lh", "hl", "hh")


@dataclass
class SubbandSet:
    ll: np.ndarray
    lh: np.ndarray
    hl: np.ndarray
    hh: np.ndarray

    def __post_init__(self):
        shapes = {np.shape(getattr(self, b)) for b in BANDS}
        if len(shapes) != 1:
            raise ShapeMismatch(f"subband planes differ in shape: {sorted(shapes)}")

    @property
    def shape(self):
        return np.shape(self.ll)

    def bands(self):
        return {b: getattr(self, b) for b in BANDS}

    def energy(self) -> float:
        return float(sum(np.sum(np.square(getattr(self, b), dtype=np.float64)) for b in BANDS))


def dwt2(img: Union[Image, np.ndarray]) -> SubbandSet:
    x = as_array(img)
    check_haar_compatible(x)
    x = x.astype(np.float64, copy=False)
    a = x[..., 0::2, 0::2]
    b = x[..., 0::2, 1::2]
    c = x[..., 1::2, 0::2]
    d = x[..., 1::2, 1::2]
    return SubbandSet(
        ll=(a + b + c + d) / 2,
        lh=(c + d - a - b) / 2,
        hl=(b - a + d - c) / 2,
        hh=(a - b - c + d) / 2,
    )


def idwt2(sb: SubbandSet) -> np.ndarray:
    """Exact inverse of :func:`dwt2`; returns a float64 array."""
    ll, lh, hl, hh = (np.asarray(getattr(sb, k), dtype=np.float64) for k in BANDS)
    if not (ll.shape == lh.shape == hl.shape == hh.shape):
        raise ShapeMismatch("subband planes differ in shape")
    out = np.empty(ll.shape[:-2] + (2 * ll.shape[-2], 2 * ll.shape[-1]))
    out[..., 0::2, 0::2] = (ll - lh - hl + hh) / 2
    out[..., 0::2, 1::2] = (ll - lh + hl - hh) / 2
    out[..., 1::2, 0::2] = (ll + lh - hl - hh) / 2
    out[..., 1::2, 1::2] = (ll + lh + hl + hh) / 2
    return out


def highfreq_stack(sb: SubbandSet) -> np.ndarray:
    """Channels ``(lh, hl, hh)`` stacked on a new leading axis."""
    return np.stack([sb.lh, sb.hl, sb.hh], axis=-3)


def dwt2_torch(x: torch.Tensor):
    """Batched Haar analysis; returns ``(ll, lh, hl, hh)`` tensors."""
    h, w = x.shape[-2:]
    if h % 2 or w % 2:
        check_haar_compatible(np.empty((h, w)))
    a = x[..., 0::2, 0::2]
    b = x[..., 0::2, 1::2]
    c = x[..., 1::2, 0::2]
    d = x[..., 1::2, 1::2]
    return (a + b + c + d) / 2, (c + d - a - b) / 2, (b - a + d - c) / 2, (a - b - c + d) / 2


def highfreq_stack_torch(x: torch.Tensor) -> torch.Tensor:
    """``(B, 1, H, W)`` image batch -> ``(B, 3, H/2, W/2)`` detail stack."""
    _, lh, hl, hh = dwt2_torch(x[:, 0])
    return torch.stack([lh, hl, hh], dim=1)
