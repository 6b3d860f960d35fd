"""Desk-scale phantom experiment shared by the demos and the acceptance suite."""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional

import numpy as np

from .backbone import DESK_PRESET
from .config import TrainConfig
from .data import Dataset, LDCTNoiseModel, PhantomSpec, generate_phantom, simulate_ldct
from .metrics import psnr, ssim
from .trainer import FitResult, fit
from .wia import preset

TRAIN_SPEC = PhantomSpec(size=64, seed=0)
TEST_SPEC = PhantomSpec(size=64, seed=1)
TEST_DOSE = 0.25


def desk_config(mode: str = "full", epochs: int = 30, **overrides) -> TrainConfig:
    span = TRAIN_SPEC.intensity_range[1] - TRAIN_SPEC.intensity_range[0]
    cfg = TrainConfig(
        epochs=epochs,
        batch_size=4,
        crop=64,
        lambda_fam=0.01,
        mode=mode,
        seed=0,
        checkpoint_every=max(epochs, 1),
        noise=preset("mayo2016", seed=0, span=span),
        backbone=DESK_PRESET,
    )
    return replace(cfg, **overrides) if overrides else cfg


def phantom_set(spec: PhantomSpec, n: int) -> Dataset:
    return Dataset([generate_phantom(spec, i) for i in range(n)])


def ldct_test_pairs(n: int = 50, dose: float = TEST_DOSE, model: LDCTNoiseModel = LDCTNoiseModel()):
    clean = [generate_phantom(TEST_SPEC, i) for i in range(n)]
    noisy = [simulate_ldct(c, dose, seed=10_000 + i, model=model) for i, c in enumerate(clean)]
    return clean, noisy


@dataclass
class DeskResult:
    mode: str
    psnr_noisy: float
    psnr_denoised: float
    ssim_noisy: float
    ssim_denoised: float
    seconds: float
    fit: Optional[FitResult] = field(default=None, repr=False)


def run_desk(mode: str = "full", n_train: int = 200, n_test: int = 50, epochs: int = 30,
             out_dir=None, **overrides) -> DeskResult:
    cfg = desk_config(mode, epochs, **overrides)
    t0 = time.perf_counter()
    result = fit(cfg, phantom_set(TRAIN_SPEC, n_train), out_dir)
    seconds = time.perf_counter() - t0
    clean, noisy = ldct_test_pairs(n_test)
    peak = TEST_SPEC.intensity_range[1] - TEST_SPEC.intensity_range[0]
    den = [result.trainer.denoise(im) for im in noisy]
    return DeskResult(
        mode=mode,
        psnr_noisy=float(np.mean([psnr(c, n, peak) for c, n in zip(clean, noisy)])),
        psnr_denoised=float(np.mean([psnr(c, d, peak) for c, d in zip(clean, den)])),
        ssim_noisy=float(np.mean([ssim(c, n, peak) for c, n in zip(clean, noisy)])),
        ssim_denoised=float(np.mean([ssim(c, d, peak) for c, d in zip(clean, den)])),
        seconds=seconds,
        fit=result,
    )
