"""Image files, datasets, synthetic phantoms and low-dose simulation.

On disk an image is a JSON sidecar ``<stem>.json`` next to a raw
little-endian payload ``<stem>.bin``.  A dataset directory additionally
holds a JSON ``manifest`` listing its items.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DataError, DegenerateRange, FormatError, InvalidDose, ConfigError
from .image import Image, as_array

IMAGE_FORMAT = "hfdenoise-image/1"
DATASET_FORMAT = "hfdenoise-dataset/1"
MANIFEST_NAME = "manifest"
UINT16_RANGE = (0.0, 65535.0)
_DTYPES = {"float32": "<f4", "float64": "<f8", "uint16": "<u2"}


# -- files --------------------------------------------------------------------


def _stem(path) -> Path:
    path = Path(path)
    if path.suffix in (".json", ".bin"):
        return path.with_suffix("")
    return path


def save_image(img: Image, path) -> Path:
    """Write sidecar + payload; returns the sidecar path."""
    stem = _stem(path)
    data = img.data
    dtype = data.dtype.name if data.dtype.name in _DTYPES else "float32"
    payload = np.ascontiguousarray(data, dtype=_DTYPES[dtype])
    meta = {
        "format": IMAGE_FORMAT,
        "id": img.id if img.id is not None else stem.name,
        "shape": list(payload.shape),
        "dtype": dtype,
        "byte_order": "little",
        "intensity_range": list(img.intensity_range),
        "payload": stem.name + ".bin",
    }
    stem.parent.mkdir(parents=True, exist_ok=True)
    stem.with_suffix(".bin").write_bytes(payload.tobytes())
    sidecar = stem.with_suffix(".json")
    sidecar.write_text(json.dumps(meta, indent=2) + "\n")
    return sidecar


def load_image(path) -> Image:
    stem = _stem(path)
    sidecar = stem.with_suffix(".json")
    try:
        meta = json.loads(sidecar.read_text())
    except FileNotFoundError:
        raise DataError(f"no image sidecar at {sidecar}") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable image sidecar {sidecar}: {exc}") from exc
    if not isinstance(meta, dict) or meta.get("format") != IMAGE_FORMAT:
        raise FormatError(f"{sidecar} is not an image sidecar")
    try:
        shape = tuple(int(s) for s in meta["shape"])
        dtype = _DTYPES[meta["dtype"]]
        payload = sidecar.parent / meta.get("payload", stem.name + ".bin")
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed sidecar {sidecar}: {exc}") from exc
    if len(shape) != 2:
        raise FormatError(f"{sidecar}: images must be 2D, got shape {shape}")
    try:
        raw = payload.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read payload {payload}: {exc}") from exc
    expected = shape[0] * shape[1] * np.dtype(dtype).itemsize
    if len(raw) != expected:
        raise FormatError(
            f"{payload}: declared shape {shape} ({meta['dtype']}) needs {expected} bytes, found {len(raw)}"
        )
    data = np.frombuffer(raw, dtype=dtype).reshape(shape)
    if meta["dtype"] == "uint16":
        return Image(data.astype(np.float32), UINT16_RANGE, meta.get("id"))
    data = data.astype(np.dtype(dtype).newbyteorder("="))
    lo, hi = meta.get("intensity_range", (float(data.min()), float(data.max())))
    return Image(data, (lo, hi), meta.get("id"))


def import_png16(path, id: Optional[str] = None) -> Image:
    """Read a grayscale PNG/TIFF raster (8- or 16-bit) as a float image."""
    from PIL import Image as PILImage

    with PILImage.open(path) as im:
        arr = np.array(im)
    if arr.ndim != 2:
        raise FormatError(f"{path}: expected a single-channel raster, got shape {arr.shape}")
    rng = UINT16_RANGE if arr.dtype == np.uint16 or arr.max() > 255 else (0.0, 255.0)
    return Image(arr.astype(np.float32), rng, id or Path(path).stem)


def list_images(directory) -> List[Path]:
    """Image sidecars in ``directory`` sorted by name."""
    return sorted(p for p in Path(directory).glob("*.json") if p.is_file())


# -- datasets -----------------------------------------------------------------


@dataclass
class Dataset:
    items: List[Image]
    split: str = "train"

    def __post_init__(self):
        dtypes = {im.data.dtype for im in self.items}
        if len(dtypes) > 1:
            raise DataError(f"dataset mixes dtypes {sorted(map(str, dtypes))}")

    def __len__(self):
        return len(self.items)

    def __getitem__(self, k):
        return self.items[k]

    @property
    def intensity_range(self) -> Tuple[float, float]:
        ranges = {im.intensity_range for im in self.items}
        if len(ranges) != 1:
            raise DataError(f"dataset items disagree on intensity_range: {sorted(ranges)}")
        return ranges.pop()


def write_dataset(directory, entries: Iterable[Tuple[Image, dict]]) -> Path:
    """Save images and a manifest; each entry is ``(image, manifest_fields)``.

    ``manifest_fields`` must contain ``split`` and may carry ``role``/``source``.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    items, seen = [], {}
    for img, fields in entries:
        if img.id is None:
            raise DataError("dataset images need an id")
        split = fields.get("split", "train")
        if img.id in seen and seen[img.id] != split:
            raise DataError(f"id {img.id!r} appears in both {seen[img.id]} and {split}")
        seen[img.id] = split
        save_image(img, directory / img.id)
        items.append({"id": img.id, "file": img.id + ".json", "role": "clean", **fields})
    manifest = {"format": DATASET_FORMAT, "items": items}
    path = directory / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def read_manifest(directory) -> dict:
    path = Path(directory) / MANIFEST_NAME
    try:
        manifest = json.loads(path.read_text())
    except FileNotFoundError:
        raise DataError(f"no dataset manifest at {path}") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable manifest {path}: {exc}") from exc
    if manifest.get("format") != DATASET_FORMAT:
        raise FormatError(f"{path} is not a dataset manifest")
    return manifest


def load_dataset(directory, split: Optional[str] = "train", role: str = "clean") -> Dataset:
    directory = Path(directory)
    manifest = read_manifest(directory)
    splits = {}
    for it in manifest["items"]:
        if splits.setdefault(it["id"], it.get("split")) != it.get("split"):
            raise DataError(f"id {it['id']!r} is listed in more than one split")
    items = [
        load_image(directory / it["file"])
        for it in manifest["items"]
        if (split is None or it.get("split") == split) and it.get("role", "clean") == role
    ]
    if not items:
        raise DataError(f"dataset {directory} has no {role} items in split {split!r}")
    return Dataset(items, split or "all")


# -- normalization ------------------------------------------------------------


def _span(rng) -> Tuple[float, float]:
    lo, hi = float(rng[0]), float(rng[1])
    if not hi > lo:
        raise DegenerateRange(f"intensity range ({lo}, {hi}) is empty")
    return lo, hi


def normalize(x, rng) -> np.ndarray:
    """Affine map of ``rng`` onto [-1, 1] (no clipping)."""
    lo, hi = _span(rng)
    return (np.asarray(as_array(x), dtype=np.float64) - lo) * (2.0 / (hi - lo)) - 1.0


def denormalize(z, rng) -> np.ndarray:
    lo, hi = _span(rng)
    return (np.asarray(z, dtype=np.float64) + 1.0) * ((hi - lo) / 2.0) + lo


# -- phantoms -----------------------------------------------------------------


@dataclass(frozen=True)
class PhantomSpec:
    """Random soft-edged ellipse phantom on a 12-bit-like scale.

    Values model attenuation offset so that air is 0 and water about 1000.
    """

    size: int = 64
    n_ellipses: Tuple[int, int] = (3, 8)
    ellipse_intensity: Tuple[float, float] = (600.0, 1600.0)
    body_intensity: float = 1000.0
    n_lines: Tuple[int, int] = (2, 4)
    line_contrast: Tuple[float, float] = (300.0, 700.0)
    intensity_range: Tuple[float, float] = (0.0, 4095.0)
    edge_width: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.size < 2 or self.size % 2:
            raise ConfigError(f"phantom size must be even and >= 2, got {self.size}")
        lo, hi = self.n_ellipses
        if lo < 1 or hi < lo:
            raise ConfigError(f"n_ellipses range must satisfy 1 <= min <= max, got {self.n_ellipses}")

    def to_dict(self) -> dict:
        return asdict(self)


def _soft(signed_distance: np.ndarray, width: float) -> np.ndarray:
    return 0.5 * (1.0 - np.tanh(signed_distance / max(width, 1e-6)))


def generate_phantom(spec: PhantomSpec, index: int) -> Image:
    """Deterministic phantom number ``index`` for ``spec``.

    A bright body disk on a dark background, piecewise-constant ellipses
    inside it, and a few one-pixel-wide lines for fine detail.
    """
    rng = np.random.default_rng([int(spec.seed), int(index), 0x9A7])
    n = spec.size
    c = (np.arange(n) + 0.5) - n / 2
    yy, xx = np.meshgrid(c, c, indexing="ij")
    img = np.zeros((n, n))

    body_r = n * rng.uniform(0.40, 0.46)
    body = _soft(np.hypot(xx, yy) - body_r, spec.edge_width)
    img += spec.body_intensity * body

    for _ in range(rng.integers(spec.n_ellipses[0], spec.n_ellipses[1] + 1)):
        a, b = n * rng.uniform(0.04, 0.2, size=2)
        rad = rng.uniform(0, body_r - max(a, b)) if body_r > max(a, b) else 0.0
        ang = rng.uniform(0, 2 * np.pi)
        cx, cy = rad * np.cos(ang), rad * np.sin(ang)
        theta = rng.uniform(0, np.pi)
        u = (xx - cx) * np.cos(theta) + (yy - cy) * np.sin(theta)
        v = -(xx - cx) * np.sin(theta) + (yy - cy) * np.cos(theta)
        q = np.hypot(u / a, v / b)
        mask = _soft((q - 1.0) * min(a, b), spec.edge_width) * body
        value = rng.uniform(*spec.ellipse_intensity)
        img = img * (1 - mask) + value * mask

    for _ in range(rng.integers(spec.n_lines[0], spec.n_lines[1] + 1)):
        p0 = rng.uniform(-0.7, 0.7, size=2) * body_r
        theta = rng.uniform(0, np.pi)
        length = rng.uniform(0.2, 0.6) * n
        d = np.array([np.cos(theta), np.sin(theta)])
        rel_x, rel_y = xx - p0[0], yy - p0[1]
        along = rel_x * d[0] + rel_y * d[1]
        across = -rel_x * d[1] + rel_y * d[0]
        dist = np.maximum(np.abs(across), np.maximum(np.abs(along - length / 2) - length / 2, 0))
        img += rng.uniform(*spec.line_contrast) * _soft(dist - 0.5, spec.edge_width) * body

    lo, hi = spec.intensity_range
    img = np.clip(img, lo, hi).astype(np.float32)
    return Image(img, spec.intensity_range, f"phantom_{index:04d}")


# -- low-dose simulation ------------------------------------------------------


@dataclass(frozen=True)
class LDCTNoiseModel:
    """Per-pixel noise variance ``(gain**2 * max(x, floor) + electronic_std**2) / dose``.

    The quantum part is ramp-filtered (unit-variance field with a power
    spectrum proportional to ``|f|^2``), mimicking filtered-backprojection
    noise texture; ``texture="white"`` disables the filter.  The electronic
    part is always white.
    """

    gain: float = 2.5
    floor: float = 100.0
    electronic_std: float = 10.0
    texture: str = "ramp"

    def __post_init__(self):
        if self.gain < 0 or self.electronic_std < 0 or self.floor < 0:
            raise ConfigError("noise model parameters must be nonnegative")
        if self.texture not in ("ramp", "white"):
            raise ConfigError("texture must be 'ramp' or 'white'")


def _ramp_field(shape, rng: np.random.Generator) -> np.ndarray:
    w = rng.standard_normal(shape)
    fy = np.fft.fftfreq(shape[0])[:, None]
    fx = np.fft.fftfreq(shape[1])[None, :]
    ramp = np.hypot(fy, fx)
    ramp /= np.sqrt(np.mean(ramp ** 2))
    return np.real(np.fft.ifft2(np.fft.fft2(w) * ramp))


def simulate_ldct(img: Image, dose_factor: float, seed: int,
                  model: LDCTNoiseModel = LDCTNoiseModel()) -> Image:
    """Signal-dependent low-dose degradation of a clean image."""
    if not (isinstance(dose_factor, (int, float)) and 0 < dose_factor <= 1):
        raise InvalidDose(f"dose_factor must lie in (0, 1], got {dose_factor!r}")
    x = np.asarray(img.data, dtype=np.float64)
    rng = np.random.default_rng([int(seed), 0x1DC7])
    scale = 1.0 / math.sqrt(dose_factor)
    out = x.copy()
    if model.gain > 0:
        field_ = _ramp_field(x.shape, rng) if model.texture == "ramp" else rng.standard_normal(x.shape)
        out += scale * model.gain * np.sqrt(np.maximum(x, model.floor)) * field_
    if model.electronic_std > 0:
        out += scale * model.electronic_std * rng.standard_normal(x.shape)
    return Image(out.astype(img.data.dtype if img.data.dtype.kind == "f" else np.float32),
                 img.intensity_range, img.id)
