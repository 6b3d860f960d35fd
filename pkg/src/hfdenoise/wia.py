"""Wavelet-domain corruption of clean images.

A clean image is split into Haar subbands, each subband receives its own
i.i.d. Gaussian noise, and the result is transformed back.  Because the
transform is orthonormal the per-pixel residual variance is the mean of
the four subband variances.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from typing import Union

import numpy as np

from .errors import InvalidSigma
from .image import Image, as_array
from .wavelet import SubbandSet, dwt2, idwt2

_BAND_IDS = {"ll": 0, "lh": 1, "hl": 2, "hh": 3}
_DIRECT_STREAM = 4


@dataclass(frozen=True)
class NoiseConfig:
    sigma_ll: float = 100.0
    sigma_lh: float = 200.0
    sigma_hl: float = 200.0
    sigma_hh: float = 150.0
    seed: int = 0

    def __post_init__(self):
        for name in ("sigma_ll", "sigma_lh", "sigma_hl", "sigma_hh"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v >= 0):
                raise InvalidSigma(f"{name} must be a finite nonnegative number, got {v!r}")
        if not (0 <= int(self.seed) < 2**64):
            raise InvalidSigma(f"seed must fit in an unsigned 64-bit integer, got {self.seed}")
        if min(self.sigma_lh, self.sigma_hl, self.sigma_hh) < self.sigma_ll:
            warnings.warn(
                "detail-band sigmas are expected to be at least sigma_ll", stacklevel=3
            )

    @property
    def sigmas(self) -> dict:
        return {"ll": self.sigma_ll, "lh": self.sigma_lh, "hl": self.sigma_hl, "hh": self.sigma_hh}

    def pixel_std(self) -> float:
        """Expected per-pixel std of ``corrupt(x) - x``."""
        return math.sqrt(sum(s * s for s in self.sigmas.values())) / 2

    def scaled(self, factor: float) -> "NoiseConfig":
        return NoiseConfig(*(s * factor for s in self.sigmas.values()), seed=self.seed)

    def to_dict(self) -> dict:
        return asdict(self)


PRESETS = {
    "mayo2016": NoiseConfig(100.0, 200.0, 200.0, 150.0),
    "mayo2020": NoiseConfig(25.0, 50.0, 50.0, 50.0),
}

# Native scale the presets were tuned for (12-bit CT window).
PRESET_SPAN = 4096.0


def preset(name: str, seed: int = 0, span: float = PRESET_SPAN) -> NoiseConfig:
    """Named sigma preset, rescaled from a 4096-level window to ``span``."""
    try:
        base = PRESETS[name]
    except KeyError:
        raise InvalidSigma(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    cfg = base.scaled(span / PRESET_SPAN)
    return NoiseConfig(cfg.sigma_ll, cfg.sigma_lh, cfg.sigma_hl, cfg.sigma_hh, seed=seed)


def _rng(seed: int, draw_index: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(draw_index), stream])


def corrupt(img: Union[Image, np.ndarray], cfg: NoiseConfig, draw_index: int):
    """Add per-subband Gaussian noise and invert the transform.

    The noise for subband ``b`` is drawn from a generator keyed on
    ``(cfg.seed, draw_index, b)``, so results do not depend on call order.
    Returns an :class:`Image` when given one, otherwise an array.
    """
    x = as_array(img)
    sb = dwt2(x)
    noisy = {}
    for band, plane in sb.bands().items():
        sigma = cfg.sigmas[band]
        if sigma == 0:
            noisy[band] = plane
        else:
            noise = _rng(cfg.seed, draw_index, _BAND_IDS[band]).standard_normal(plane.shape)
            noisy[band] = plane + sigma * noise
    out = idwt2(SubbandSet(**noisy)).astype(x.dtype if x.dtype.kind == "f" else np.float64)
    if isinstance(img, Image):
        return img.with_data(out)
    return out


def corrupt_direct(img: Union[Image, np.ndarray], sigma: float, draw_index: int, seed: int = 0):
    """Pixel-domain i.i.d. Gaussian noise with std ``sigma``."""
    if not (math.isfinite(sigma) and sigma >= 0):
        raise InvalidSigma(f"sigma must be finite and nonnegative, got {sigma!r}")
    x = as_array(img)
    if sigma == 0:
        out = x.copy()
    else:
        noise = _rng(seed, draw_index, _DIRECT_STREAM).standard_normal(x.shape)
        out = (x + sigma * noise).astype(x.dtype if x.dtype.kind == "f" else np.float64)
    if isinstance(img, Image):
        return img.with_data(out)
    return out


def matched_direct_sigma(cfg: NoiseConfig) -> float:
    """Pixel-domain sigma carrying the same noise power as ``cfg``."""
    return cfg.pixel_std()
