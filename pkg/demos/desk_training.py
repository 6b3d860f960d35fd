"""
Desk-scale training run
=======================

Trains the small backbone on synthetic phantoms with wavelet corruption and
the feature-matching loss, then denoises held-out simulated low-dose scans.
Pass mode names to compare ablations, and ``--epochs`` to shorten the run:

    python3 demos/desk_training.py full baseline --epochs 30
"""

import argparse

import torch

from hfdenoise.experiments import run_desk

parser = argparse.ArgumentParser()
parser.add_argument("modes", nargs="*", default=["full", "baseline"])
parser.add_argument("--epochs", type=int, default=30)
parser.add_argument("--n-train", type=int, default=200)
args = parser.parse_args()

torch.set_num_threads(1)
print(f"{'mode':10s} {'noisy dB':>9s} {'denoised dB':>12s} {'SSIM':>6s} {'seconds':>8s}")
for mode in args.modes:
    r = run_desk(mode, n_train=args.n_train, epochs=args.epochs)
    print(f"{mode:10s} {r.psnr_noisy:9.2f} {r.psnr_denoised:12.2f} {100 * r.ssim_denoised:6.2f} {r.seconds:8.0f}")
