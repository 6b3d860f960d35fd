from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from .errors import NonFinite, OddDimension, ShapeError


@dataclass
class Image:
    """A 2D single-channel raster plus the intensity window it lives in.

    ``intensity_range`` is the (min, max) of the native scale (e.g. a
    12-bit CT window).  It is metadata: values are not clipped to it.
    """

    data: np.ndarray
    intensity_range: Tuple[float, float] = (0.0, 1.0)
    id: Optional[str] = None
    extra: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 2:
            raise ShapeError(f"image must be 2D, got shape {self.data.shape}")
        lo, hi = self.intensity_range
        self.intensity_range = (float(lo), float(hi))

    @property
    def shape(self):
        return self.data.shape

    def with_data(self, data: np.ndarray, id: Optional[str] = None) -> "Image":
        return replace(self, data=data, id=self.id if id is None else id)


def as_array(img) -> np.ndarray:
    if isinstance(img, Image):
        return img.data
    return np.asarray(img)


def check_haar_compatible(arr: np.ndarray) -> None:
    if arr.ndim < 2:
        raise ShapeError(f"expected at least 2 dims, got shape {arr.shape}")
    h, w = arr.shape[-2:]
    if h < 2 or w < 2 or h % 2 or w % 2:
        raise OddDimension(
            f"image dims must be even and >= 2 for a single-level Haar transform, got {h}x{w}"
        )
    if not np.all(np.isfinite(arr)):
        raise NonFinite("image contains NaN or Inf")
