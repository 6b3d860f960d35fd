"""Training loop: on-the-fly corruption, pixel + feature loss, alternating updates.

Each step has two phases.  Phase A updates the reconstruction network on
``pixel_loss + lambda * feature_loss`` with both encoders frozen.  Phase B
updates the online encoder on the feature loss with the network output
detached, then moves the target encoder towards it by EMA.

All randomness is keyed on explicit integers (seed, epoch, sample index,
global step), so a run is reproducible and resumable from a checkpoint.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from . import checkpoint as ckpt
from .backbone import Backbone
from .config import TrainConfig, config_from_dict
from .data import Dataset, denormalize, normalize
from .errors import CropTooLarge, FormatError, NonFiniteLoss, ShapeError, ShapeMismatch
from .fam import EncoderPair, fam_loss, fam_star_loss, frozen
from .image import Image
from .metrics import ssim_torch
from .wavelet import highfreq_stack_torch
from .wia import corrupt, corrupt_direct, matched_direct_sigma

log = logging.getLogger(__name__)

NORMALIZED_PEAK = 2.0
CHECKPOINT_VERSION = 1


def pixel_loss(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """``MSE(x, y) + (1 - SSIM(x, y))`` on [-1, 1]-normalized batches."""
    if x.shape != y.shape:
        raise ShapeMismatch(f"shapes differ: {tuple(x.shape)} vs {tuple(y.shape)}")
    return F.mse_loss(y, x) + (1.0 - ssim_torch(x, y, NORMALIZED_PEAK))


# -- augmentation -------------------------------------------------------------


@dataclass(frozen=True)
class AugmentDraw:
    flip_h: bool = False
    flip_v: bool = False
    rot90: int = 0
    top: int = 0
    left: int = 0


def draw_augment(rng: np.random.Generator, shape: Tuple[int, int], crop: int) -> AugmentDraw:
    flip_h, flip_v = (bool(b) for b in rng.integers(0, 2, size=2))
    k = int(rng.integers(0, 4))
    h, w = (shape[1], shape[0]) if k % 2 else shape
    if crop > h or crop > w:
        raise CropTooLarge(f"crop {crop} exceeds image size {h}x{w}")
    top = 2 * int(rng.integers(0, (h - crop) // 2 + 1))
    left = 2 * int(rng.integers(0, (w - crop) // 2 + 1))
    return AugmentDraw(flip_h, flip_v, k, top, left)


def apply_augment(arr: np.ndarray, draw: AugmentDraw, crop: int) -> np.ndarray:
    out = arr
    if draw.flip_h:
        out = out[:, ::-1]
    if draw.flip_v:
        out = out[::-1, :]
    out = np.rot90(out, draw.rot90)
    if crop > out.shape[0] or crop > out.shape[1]:
        raise CropTooLarge(f"crop {crop} exceeds image size {out.shape[0]}x{out.shape[1]}")
    return np.ascontiguousarray(out[draw.top:draw.top + crop, draw.left:draw.left + crop])


def augment(img: Image, rng: np.random.Generator, crop: int) -> Image:
    """Random flips, quarter turns, then an even-aligned ``crop x crop`` window."""
    draw = draw_augment(rng, img.shape, crop)
    return img.with_data(apply_augment(img.data, draw, crop))


# -- trainer ------------------------------------------------------------------


def _params(module) -> Dict[str, torch.Tensor]:
    return {k: v.detach().clone() for k, v in module.named_parameters()}


def _changed(before: Dict[str, torch.Tensor], module) -> List[str]:
    return [k for k, v in module.named_parameters() if not torch.equal(before[k], v.detach())]


class FreezeViolation(AssertionError):
    pass


class Trainer:
    """Owns the network, the encoder pair, both optimizers and the step counter."""

    def __init__(self, config: TrainConfig, intensity_range: Tuple[float, float]):
        self.config = config
        self.intensity_range = (float(intensity_range[0]), float(intensity_range[1]))
        self.dtype = torch.float64 if config.dtype == "float64" else torch.float32
        torch.manual_seed(config.seed)
        self.backbone = Backbone(config.backbone).to(self.dtype)
        self.pair = EncoderPair(config.encoder, config.ema_momentum).to(self.dtype)
        betas = (config.adam_beta1, config.adam_beta2)
        self.opt_backbone = torch.optim.Adam(self.backbone.parameters(), lr=config.lr, betas=betas)
        self.opt_encoder = torch.optim.Adam(self.pair.online.parameters(), lr=config.lr, betas=betas)
        self.global_step = 0
        self.epoch = 0
        self.audit = False

    # batches

    def _to_tensor(self, arrays: Sequence[np.ndarray]) -> torch.Tensor:
        z = np.stack([normalize(a, self.intensity_range) for a in arrays])[:, None]
        return torch.from_numpy(z).to(self.dtype)

    def corrupt_input(self, clean: np.ndarray, draw_index: int) -> np.ndarray:
        cfg = self.config
        if cfg.corruption == "wia":
            return corrupt(clean.astype(np.float64), cfg.noise, draw_index)
        if cfg.corruption == "direct":
            return corrupt_direct(clean.astype(np.float64), matched_direct_sigma(cfg.noise),
                                  draw_index, seed=cfg.noise.seed)
        return clean

    def make_batch(self, images: Sequence[Image], indices: Sequence[int], epoch: int):
        """Augmented clean batch and its corrupted counterpart, both normalized."""
        cfg = self.config
        clean, noisy = [], []
        for pos, k in enumerate(indices):
            rng = np.random.default_rng([cfg.seed, epoch, int(k), 0xA06])
            arr = apply_augment(images[k].data, draw_augment(rng, images[k].shape, cfg.crop), cfg.crop)
            clean.append(arr)
            noisy.append(self.corrupt_input(arr, self.global_step * cfg.batch_size + pos))
        return self._to_tensor(clean), self._to_tensor(noisy)

    def epoch_order(self, n: int, epoch: int) -> List[np.ndarray]:
        perm = np.random.default_rng([self.config.seed, epoch, 0x5F]).permutation(n)
        bs = self.config.batch_size
        return [perm[i:i + bs] for i in range(0, n, bs)]

    # losses

    def feature_loss(self, hf_x: torch.Tensor, hf_y: torch.Tensor) -> torch.Tensor:
        if self.config.feature_loss == "fam_star":
            return fam_star_loss(self.pair, hf_x, hf_y)
        return fam_loss(self.pair, hf_x, hf_y)

    def _fam_applicable(self, hf: torch.Tensor) -> bool:
        d = self.config.encoder.input_divisor
        return hf.shape[-2] % d == 0 and hf.shape[-1] % d == 0

    def phase_a_loss(self, x: torch.Tensor, x_in: torch.Tensor, lambda_fam: Optional[float] = None):
        """Reconstruction objective with the encoders frozen.

        Returns ``(total, l_pixel, l_fam, y)``; ``l_fam`` is detached when it
        does not enter the objective.
        """
        lam = self.config.lambda_fam if lambda_fam is None else lambda_fam
        y = self.backbone(x_in)
        l_pix = pixel_loss(x, y)
        hf_x = highfreq_stack_torch(x)
        with frozen(self.pair.online):
            if self.config.uses_fam and lam > 0:
                l_fam = self.feature_loss(hf_x, highfreq_stack_torch(y))
                total = l_pix + lam * l_fam
            else:
                if self._fam_applicable(hf_x):
                    with torch.no_grad():
                        l_fam = self.feature_loss(hf_x, highfreq_stack_torch(y))
                else:
                    l_fam = torch.full((), float("nan"), dtype=self.dtype)
                total = l_pix
        return total, l_pix, l_fam, y

    def _check_finite(self, name: str, value: torch.Tensor) -> None:
        if not torch.isfinite(value):
            raise NonFiniteLoss(
                f"{name} became {value.item()} at step {self.global_step} (epoch {self.epoch}, mode {self.config.mode})"
            )

    def train_step(self, x: torch.Tensor, x_in: torch.Tensor) -> dict:
        self.backbone.train()
        audit = self.audit
        if audit:
            enc_before, tgt_before = _params(self.pair.online), _params(self.pair.target)

        total, l_pix, l_fam, y = self.phase_a_loss(x, x_in)
        self._check_finite("phase A loss", total)
        self.opt_backbone.zero_grad(set_to_none=True)
        total.backward()
        self.opt_backbone.step()

        if audit:
            bad = _changed(enc_before, self.pair.online) + _changed(tgt_before, self.pair.target)
            if bad:
                raise FreezeViolation(f"phase A modified encoder parameters: {bad[:3]}")
            bb_before = _params(self.backbone)

        l_enc = None
        if self.config.uses_fam:
            with frozen(self.backbone):
                l_enc = self.feature_loss(highfreq_stack_torch(x), highfreq_stack_torch(y.detach()))
            self._check_finite("phase B loss", l_enc)
            self.opt_encoder.zero_grad(set_to_none=True)
            l_enc.backward()
            self.opt_encoder.step()
            if audit:
                bad = _changed(bb_before, self.backbone) + _changed(tgt_before, self.pair.target)
                if bad:
                    raise FreezeViolation(f"phase B modified non-encoder parameters: {bad[:3]}")
                online_before = _params(self.pair.online)
            self.pair.ema_update()
            if audit:
                bad = _changed(bb_before, self.backbone) + _changed(online_before, self.pair.online)
                if bad:
                    raise FreezeViolation(f"EMA modified non-target parameters: {bad[:3]}")

        self.global_step += 1
        return {
            "step": self.global_step,
            "epoch": self.epoch,
            "loss": float(total.detach()),
            "l_pixel": float(l_pix.detach()),
            "l_fam": None if torch.isnan(l_fam) else float(l_fam.detach()),
            "l_fam_encoder": None if l_enc is None else float(l_enc.detach()),
            "lr": self.config.lr,
        }

    # inference

    @torch.no_grad()
    def denoise(self, img: Image, pad: bool = False) -> Image:
        """Network output for one image, mapped back to its native scale."""
        d = self.config.backbone.divisor
        h, w = img.shape
        arr = img.data
        if h % d or w % d:
            if not pad:
                raise ShapeError(
                    f"image {img.id or ''} is {h}x{w}; both dims must be divisible by 2**n_downsample = {d}"
                )
            arr = reflect_pad(arr, d)
        self.backbone.eval()
        z = torch.from_numpy(normalize(arr, img.intensity_range)[None, None]).to(self.dtype)
        out = self.backbone(z)[0, 0].cpu().numpy()[:h, :w]
        data = denormalize(out, img.intensity_range).astype(np.float32)
        return Image(data, img.intensity_range, img.id)

    # persistence

    def state_tensors(self) -> dict:
        tensors = {}
        tensors.update(ckpt.module_tensors(self.backbone, "backbone"))
        tensors.update(ckpt.module_tensors(self.pair.online, "encoder.online"))
        tensors.update(ckpt.module_tensors(self.pair.target, "encoder.target"))
        for name, opt in (("backbone", self.opt_backbone), ("encoder", self.opt_encoder)):
            for idx, state in opt.state_dict()["state"].items():
                for key, value in state.items():
                    tensors[f"optim.{name}.{idx}.{key}"] = torch.as_tensor(value).reshape(-1) if key == "step" else value
        return tensors

    def save(self, path) -> Path:
        meta = {
            "version": CHECKPOINT_VERSION,
            "config": self.config.to_dict(),
            "intensity_range": list(self.intensity_range),
            "global_step": self.global_step,
            "epoch": self.epoch,
        }
        return ckpt.save_checkpoint(path, self.state_tensors(), meta)

    @classmethod
    def load(cls, path) -> "Trainer":
        tensors, meta = ckpt.load_checkpoint(path)
        if meta.get("version") != CHECKPOINT_VERSION:
            raise FormatError(f"unsupported checkpoint version {meta.get('version')!r}")
        cfg, _ = config_from_dict(meta["config"])
        trainer = cls(cfg, tuple(meta["intensity_range"]))
        ckpt.restore_module(trainer.backbone, tensors, "backbone")
        ckpt.restore_module(trainer.pair.online, tensors, "encoder.online")
        ckpt.restore_module(trainer.pair.target, tensors, "encoder.target")
        for name, opt in (("backbone", trainer.opt_backbone), ("encoder", trainer.opt_encoder)):
            sd = opt.state_dict()
            params = sd["param_groups"][0]["params"]
            state = {}
            for idx in params:
                prefix = f"optim.{name}.{idx}."
                if prefix + "step" not in tensors:
                    continue
                p = opt.param_groups[0]["params"][idx]
                state[idx] = {
                    "step": torch.tensor(float(tensors[prefix + "step"][0])),
                    "exp_avg": torch.from_numpy(np.array(tensors[prefix + "exp_avg"])).to(p.dtype),
                    "exp_avg_sq": torch.from_numpy(np.array(tensors[prefix + "exp_avg_sq"])).to(p.dtype),
                }
            sd["state"] = state
            opt.load_state_dict(sd)
        trainer.global_step = int(meta["global_step"])
        trainer.epoch = int(meta["epoch"])
        return trainer


def reflect_pad(arr: np.ndarray, multiple: int) -> np.ndarray:
    """Reflect-pad the bottom/right edges up to the next multiple."""
    h, w = arr.shape
    ph = (-h) % multiple
    pw = (-w) % multiple
    return np.pad(arr, ((0, ph), (0, pw)), mode="reflect")


def denoise(trainer: Trainer, img: Image, pad: bool = False) -> Image:
    return trainer.denoise(img, pad=pad)


# -- fit ----------------------------------------------------------------------


@dataclass
class FitResult:
    trainer: Trainer
    log: List[dict]
    checkpoints: List[Path]


def format_record(record: dict) -> str:
    return json.dumps(record, sort_keys=True)


def fit(config: TrainConfig, dataset: Dataset, out_dir=None, *, trainer: Optional[Trainer] = None,
        audit: bool = False, deterministic: bool = True,
        on_step: Optional[Callable[[dict], None]] = None) -> FitResult:
    """Train for ``config.epochs`` epochs (resuming from ``trainer.epoch``).

    With ``out_dir`` set, writes ``loss.log`` (one JSON record per step),
    ``epoch_XXXX.ckpt`` every ``checkpoint_every`` epochs and ``final.ckpt``.
    A non-finite loss raises :class:`NonFiniteLoss`; checkpoints already
    written stay on disk.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    if deterministic:
        torch.use_deterministic_algorithms(True)
    trainer = trainer or Trainer(config, dataset.intensity_range)
    trainer.audit = audit
    out = Path(out_dir) if out_dir is not None else None
    log_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_fh = open(out / "loss.log", "a" if trainer.global_step else "w")
    records, saved = [], []
    try:
        while trainer.epoch < config.epochs:
            for batch_idx in trainer.epoch_order(len(dataset), trainer.epoch):
                x, x_in = trainer.make_batch(dataset.items, batch_idx, trainer.epoch)
                rec = trainer.train_step(x, x_in)
                records.append(rec)
                if log_fh is not None:
                    log_fh.write(format_record(rec) + "\n")
                if on_step is not None:
                    on_step(rec)
            trainer.epoch += 1
            log.info("epoch %d done, step %d, l_pixel %.5f", trainer.epoch, trainer.global_step,
                     records[-1]["l_pixel"])
            if out is not None and trainer.epoch % config.checkpoint_every == 0:
                saved.append(trainer.save(out / f"epoch_{trainer.epoch:04d}.ckpt"))
        if out is not None:
            saved.append(trainer.save(out / "final.ckpt"))
    finally:
        if log_fh is not None:
            log_fh.close()
    return FitResult(trainer, records, saved)
