"""Image-quality metrics and frequency diagnostics."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from .errors import IndivisiblePatch, ShapeMismatch, TooSmall
from .image import Image, as_array
from .wavelet import BANDS, dwt2

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(ref, test) -> Tuple[np.ndarray, np.ndarray]:
    a = np.asarray(as_array(ref), dtype=np.float64)
    b = np.asarray(as_array(test), dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"shapes differ: {a.shape} vs {b.shape}")
    return a, b


def default_peak(img) -> float:
    """Span of an image's declared intensity range."""
    lo, hi = img.intensity_range
    return hi - lo


def psnr(ref, test, peak: float) -> float:
    """PSNR in dB; identical inputs return ``PSNR_CAP_DB``."""
    if not peak > 0:
        raise ValueError("peak must be positive")
    a, b = _pair(ref, test)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(peak * peak / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2
    w = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return w / w.sum()


def _filter_valid(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    k = len(w)
    rows = np.lib.stride_tricks.sliding_window_view(x, k, axis=0) @ w
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=1) @ w


def ssim_map(ref, test, peak: float) -> np.ndarray:
    a, b = _pair(ref, test)
    if min(a.shape) < SSIM_WINDOW:
        raise TooSmall(f"SSIM needs images at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape}")
    w = gaussian_window()
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    mu_a, mu_b = _filter_valid(a, w), _filter_valid(b, w)
    var_a = _filter_valid(a * a, w) - mu_a ** 2
    var_b = _filter_valid(b * b, w) - mu_b ** 2
    cov = _filter_valid(a * b, w) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return num / den


def ssim(ref, test, peak: float) -> float:
    """Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5)."""
    if np.array_equal(as_array(ref), as_array(test)):
        _pair(ref, test)
        return 1.0
    return float(np.mean(ssim_map(ref, test, peak)))


def ssim_torch(x: torch.Tensor, y: torch.Tensor, peak: float) -> torch.Tensor:
    """Differentiable mean SSIM of two ``(B, 1, H, W)`` batches."""
    if x.shape != y.shape:
        raise ShapeMismatch(f"shapes differ: {tuple(x.shape)} vs {tuple(y.shape)}")
    if min(x.shape[-2:]) < SSIM_WINDOW:
        raise TooSmall(f"SSIM needs images at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    g = torch.as_tensor(gaussian_window(), dtype=x.dtype)
    kernel = (g[:, None] * g[None, :])[None, None]
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2

    def filt(t):
        return F.conv2d(t, kernel)

    mu_x, mu_y = filt(x), filt(y)
    var_x = filt(x * x) - mu_x ** 2
    var_y = filt(y * y) - mu_y ** 2
    cov = filt(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
    return (num / den).mean()


@dataclass
class NPSResult:
    frequencies: np.ndarray  # cycles/pixel, bin centres
    power: np.ndarray
    total_power: float
    n_patches: int
    nps2d: np.ndarray = field(repr=False)

    @property
    def radial(self) -> List[Tuple[float, float]]:
        return [(float(f), float(p)) for f, p in zip(self.frequencies, self.power)]


def nps(residual, patch: int) -> NPSResult:
    """Patch-averaged periodogram of a residual, radially binned.

    Each non-overlapping ``patch x patch`` tile has its mean removed, then
    ``|DFT|^2 / patch^2`` is averaged over tiles.  Radial bin ``k`` (1..patch/2)
    collects frequencies with ``round(|f| * patch) == k``; the DC term is
    excluded.  ``total_power`` is the mean of the 2D spectrum, which equals
    the mean-removed residual variance.
    """
    r = np.asarray(as_array(residual), dtype=np.float64)
    if r.ndim == 2:
        r = r[None]
    h, w = r.shape[-2:]
    if patch < 2 or h % patch or w % patch:
        raise IndivisiblePatch(f"patch size {patch} does not divide image dims {h}x{w}")
    tiles = r.reshape(r.shape[0], h // patch, patch, w // patch, patch).transpose(0, 1, 3, 2, 4)
    tiles = tiles.reshape(-1, patch, patch)
    tiles = tiles - tiles.mean(axis=(1, 2), keepdims=True)
    spec = np.abs(np.fft.fft2(tiles)) ** 2 / (patch * patch)
    nps2d = spec.mean(axis=0)
    f = np.fft.fftfreq(patch)
    radius = np.hypot(f[:, None], f[None, :])
    k = np.rint(radius * patch).astype(int)
    nbins = patch // 2
    power = np.array([nps2d[k == b].mean() for b in range(1, nbins + 1)])
    freqs = np.arange(1, nbins + 1) / patch
    return NPSResult(freqs, power, float(nps2d.mean()), tiles.shape[0], nps2d)


def subband_difference(a, b) -> Dict[str, float]:
    """Per-subband squared error between the Haar transforms of ``a`` and ``b``.

    Each entry is the subband's sum of squared differences divided by the
    number of image pixels, so the four entries add up to the image MSE.
    """
    x, y = _pair(a, b)
    sa, sb = dwt2(x), dwt2(y)
    n = x.size
    return {band: float(np.sum((getattr(sa, band) - getattr(sb, band)) ** 2) / n) for band in BANDS}


def hf_ll_ratio(diff: Dict[str, float]) -> Optional[float]:
    """Mean detail-band entry over the LL entry; ``None`` when LL is zero."""
    hf = (diff["lh"] + diff["hl"] + diff["hh"]) / 3
    if diff["ll"] == 0:
        return None
    return hf / diff["ll"]


@dataclass
class MetricsReport:
    id: Optional[str]
    psnr_db: float
    ssim: float
    nps_radial: List[Tuple[float, float]]
    subband_mse: Dict[str, float]

    @property
    def ssim_percent(self) -> float:
        return 100.0 * self.ssim

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ssim_percent"] = self.ssim_percent
        d["nps_radial"] = [list(p) for p in self.nps_radial]
        return d


def evaluate_pair(ref: Image, test: Image, peak: Optional[float] = None, nps_patch: int = 16) -> MetricsReport:
    peak = default_peak(ref) if peak is None else peak
    return MetricsReport(
        id=ref.id,
        psnr_db=psnr(ref, test, peak),
        ssim=ssim(ref, test, peak),
        nps_radial=nps(as_array(test).astype(np.float64) - as_array(ref), nps_patch).radial,
        subband_mse=subband_difference(ref, test),
    )


def summarize(reports: List[MetricsReport]) -> dict:
    if not reports:
        return {"count": 0}
    out = {
        "count": len(reports),
        "psnr_db": float(np.mean([r.psnr_db for r in reports])),
        "ssim": float(np.mean([r.ssim for r in reports])),
        "ssim_percent": float(np.mean([r.ssim_percent for r in reports])),
        "subband_mse": {b: float(np.mean([r.subband_mse[b] for r in reports])) for b in BANDS},
    }
    freqs = [f for f, _ in reports[0].nps_radial]
    out["nps_radial"] = [
        [f, float(np.mean([r.nps_radial[k][1] for r in reports]))] for k, f in enumerate(freqs)
    ]
    return out
