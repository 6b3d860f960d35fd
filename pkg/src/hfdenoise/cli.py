"""Command-line entry point: ``hfdenoise <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error,
4 non-finite loss, 5 shape violation.
"""
from __future__ import annotations

import argparse
import fnmatch
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import wia
from .config import dump_config, load_config
from .data import (
    Dataset,
    PhantomSpec,
    generate_phantom,
    list_images,
    load_dataset,
    load_image,
    save_image,
    simulate_ldct,
    write_dataset,
)
from .errors import ConfigError, DataError, HFDenoiseError
from .metrics import evaluate_pair, hf_ll_ratio, subband_difference, summarize
from .trainer import Trainer, fit

OUT_ENV = "HFDENOISE_OUT"
EXIT_CODES = {0: "success", 2: "configuration error", 3: "data error", 4: "non-finite loss", 5: "shape violation"}


@dataclass
class CommandResult:
    exit_code: int = 0
    artifacts: List[str] = field(default_factory=list)
    summary: str = ""


def _default_out(name: str) -> str:
    return str(Path(os.environ.get(OUT_ENV, "hfdenoise-out")) / name)


def _write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


# -- commands -----------------------------------------------------------------


def _training_data(data: dict, base: Path) -> Dataset:
    if "dir" in data:
        directory = Path(data["dir"])
        if not directory.is_absolute():
            directory = base / directory
        return load_dataset(directory, data.get("split", "train"))
    if "phantoms" in data:
        p = dict(data["phantoms"])
        n = int(p.pop("n", 200))
        for key in ("n_ellipses", "ellipse_intensity", "n_lines", "line_contrast", "intensity_range"):
            if key in p:
                p[key] = tuple(p[key])
        try:
            spec = PhantomSpec(**p)
        except TypeError as exc:
            raise ConfigError(f"invalid data.phantoms section: {exc}") from exc
        return Dataset([generate_phantom(spec, i) for i in range(n)])
    raise ConfigError("config needs data.dir or data.phantoms")


def cmd_train(args) -> CommandResult:
    cfg, data, resolved = load_config(args.config, args.set or [])
    out = Path(args.out or _default_out("train"))
    dataset = _training_data(data, Path(args.config).resolve().parent)
    if len(dataset) == 0:
        raise DataError("training dataset is empty")
    out.mkdir(parents=True, exist_ok=True)
    snapshot = out / "config.resolved.yaml"
    snapshot.write_text(dump_config(resolved))
    result = fit(cfg, dataset, out, audit=args.audit)
    artifacts = [str(snapshot), str(out / "loss.log")] + [str(p) for p in result.checkpoints]
    last = result.log[-1]
    return CommandResult(0, artifacts,
                         f"trained {cfg.mode} for {cfg.epochs} epochs ({last['step']} steps), "
                         f"final l_pixel {last['l_pixel']:.6f}")


def cmd_denoise(args) -> CommandResult:
    trainer = Trainer.load(args.ckpt)
    src = Path(args.input)
    if src.is_dir():
        inputs = [p for p in list_images(src) if fnmatch.fnmatchcase(p.stem, args.glob)]
    elif src.with_suffix(".json").exists():
        inputs = [src.with_suffix(".json")]
    else:
        raise DataError(f"input {src} does not exist")
    out = Path(args.out or _default_out("denoised"))
    out.mkdir(parents=True, exist_ok=True)
    artifacts = []
    for path in inputs:
        img = load_image(path)
        den = trainer.denoise(img, pad=args.pad)
        artifacts.append(str(save_image(den, out / (img.id or path.stem))))
    return CommandResult(0, artifacts, f"denoised {len(artifacts)} images into {out}")


def _by_id(directory: Path, pattern: str = "*") -> dict:
    if not directory.is_dir():
        raise DataError(f"{directory} is not a directory")
    imgs = {}
    for path in list_images(directory):
        if not fnmatch.fnmatchcase(path.stem, pattern):
            continue
        img = load_image(path)
        imgs[img.id or path.stem] = img
    return imgs


def cmd_evaluate(args) -> CommandResult:
    refs = _by_id(Path(args.ref), args.glob)
    tests = _by_id(Path(args.test))
    wanted = {rid + args.suffix: rid for rid in refs}
    if set(wanted) != set(tests):
        missing = sorted(set(wanted) - set(tests))
        extra = sorted(set(tests) - set(wanted))
        raise DataError(f"reference/test ids do not match (missing {missing[:5]}, unexpected {extra[:5]})")
    reports = []
    for tid in sorted(tests):
        ref = refs[wanted[tid]]
        reports.append(evaluate_pair(ref, tests[tid], peak=args.peak, nps_patch=args.nps_patch))
    out = Path(args.out or _default_out("metrics.jsonl"))
    out.parent.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps({"kind": "image", **r.to_dict()}, sort_keys=True) for r in reports]
    summary = summarize(reports)
    lines.append(json.dumps({"kind": "summary", **summary}, sort_keys=True))
    out.write_text("\n".join(lines) + "\n")
    text = f"evaluated {len(reports)} images"
    if reports:
        text += f": mean PSNR {summary['psnr_db']:.3f} dB, mean SSIM {summary['ssim_percent']:.2f}"
    return CommandResult(0, [str(out)], text)


def cmd_corrupt(args) -> CommandResult:
    img = load_image(args.input)
    base = wia.preset(args.preset, seed=args.seed, span=args.span) if args.preset else wia.NoiseConfig(0, 0, 0, 0, args.seed)
    sig = {k: getattr(args, f"sigma_{k}") for k in ("ll", "lh", "hl", "hh")}
    sig = {k: (v if v is not None else base.sigmas[k]) for k, v in sig.items()}
    cfg = wia.NoiseConfig(sig["ll"], sig["lh"], sig["hl"], sig["hh"], seed=args.seed)
    out_img = wia.corrupt(img, cfg, args.draw_index)
    out = Path(args.out or _default_out("corrupted"))
    side = save_image(out_img, out)
    resid = out_img.data.astype(np.float64) - img.data
    report = {
        "noise": cfg.to_dict(),
        "draw_index": args.draw_index,
        "residual_std": float(resid.std()),
        "expected_residual_std": cfg.pixel_std(),
        "residual_mean": float(resid.mean()),
    }
    rep = _write_json(side.with_name(side.stem + ".report.json"), report)
    return CommandResult(0, [str(side), str(rep)],
                         f"residual std {report['residual_std']:.4f} (expected {cfg.pixel_std():.4f})")


def cmd_analyze(args) -> CommandResult:
    a, b = load_image(args.a), load_image(args.b)
    if a.shape != b.shape:
        raise DataError(f"images differ in shape: {a.shape} vs {b.shape}")
    diff = subband_difference(a, b)
    ratio = hf_ll_ratio(diff)
    out = _write_json(Path(args.out or _default_out("analysis.json")),
                      {"subband_mse": diff, "hf_ll_ratio": ratio, "a": a.id, "b": b.id})
    shown = "undefined (LL difference is zero)" if ratio is None else f"{ratio:.4f}"
    return CommandResult(0, [str(out)], f"HF/LL ratio {shown}")


def cmd_phantom(args) -> CommandResult:
    spec = PhantomSpec(size=args.size, seed=args.seed)
    if args.n < 1:
        raise ConfigError("--n must be at least 1")
    entries = []
    for i in range(args.n):
        clean = generate_phantom(spec, i)
        entries.append((clean, {"split": args.split, "role": "clean"}))
        if args.simulate_ldct is not None:
            noisy = simulate_ldct(clean, args.simulate_ldct, seed=args.seed * 1_000_003 + i)
            noisy.id = f"{clean.id}_ldct"
            entries.append((noisy, {"split": args.split, "role": "ldct", "source": clean.id,
                                    "dose_factor": args.simulate_ldct}))
    out = Path(args.out or _default_out("phantoms"))
    manifest = write_dataset(out, entries)
    artifacts = [str(out / (img.id + ".json")) for img, _ in entries] + [str(manifest)]
    return CommandResult(0, artifacts, f"wrote {len(entries)} images to {out}")


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    epilog = "exit codes: " + ", ".join(f"{k} {v}" for k, v in EXIT_CODES.items())
    p = argparse.ArgumentParser(prog="hfdenoise", description="Wavelet-corruption self-supervised denoising.",
                                epilog=epilog, formatter_class=fmt)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a config file", formatter_class=fmt, epilog=epilog)
    t.add_argument("--config", required=True, help="YAML config path")
    t.add_argument("--out", default=None, help=f"output directory (default: ${OUT_ENV}/train)")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", default=None,
                   help="override a config key, e.g. trainer.lambda_fam=0 (repeatable)")
    t.add_argument("--audit", action="store_true", help="check parameter freezing at every step")
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("denoise", help="denoise an image file or directory", formatter_class=fmt, epilog=epilog)
    d.add_argument("--ckpt", required=True, help="checkpoint file")
    d.add_argument("--in", dest="input", required=True, help="image sidecar/stem or directory")
    d.add_argument("--out", default=None, help=f"output directory (default: ${OUT_ENV}/denoised)")
    d.add_argument("--pad", action="store_true", help="reflect-pad images whose dims are not divisible")
    d.add_argument("--glob", default="*", help="only images whose file stem matches this pattern (directory input)")
    d.set_defaults(func=cmd_denoise)

    e = sub.add_parser("evaluate", help="PSNR/SSIM/NPS/subband report", formatter_class=fmt, epilog=epilog)
    e.add_argument("--ref", required=True, help="reference image directory")
    e.add_argument("--test", required=True, help="test image directory")
    e.add_argument("--out", default=None, help=f"JSON-lines report (default: ${OUT_ENV}/metrics.jsonl)")
    e.add_argument("--peak", type=float, default=None, help="PSNR/SSIM peak (default: reference intensity span)")
    e.add_argument("--nps-patch", type=int, default=16, help="NPS tile size")
    e.add_argument("--suffix", default="", help="suffix appended to reference ids to find test ids")
    e.add_argument("--glob", default="*", help="only reference images whose file stem matches this pattern")
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("corrupt", help="preview wavelet-domain corruption", formatter_class=fmt, epilog=epilog)
    c.add_argument("--in", dest="input", required=True, help="input image")
    c.add_argument("--out", default=None, help=f"output image stem (default: ${OUT_ENV}/corrupted)")
    c.add_argument("--preset", choices=sorted(wia.PRESETS), default=None, help="sigma preset")
    c.add_argument("--span", type=float, default=wia.PRESET_SPAN, help="intensity span the preset is rescaled to")
    for band in ("ll", "lh", "hl", "hh"):
        c.add_argument(f"--sigma-{band}", type=float, default=None,
                       help=f"{band.upper()} noise std (default: preset value or 0)")
    c.add_argument("--seed", type=int, default=0, help="noise seed")
    c.add_argument("--draw-index", type=int, default=0, help="draw counter")
    c.set_defaults(func=cmd_corrupt)

    a = sub.add_parser("analyze", help="subband difference between two images", formatter_class=fmt, epilog=epilog)
    a.add_argument("--a", required=True, help="first image")
    a.add_argument("--b", required=True, help="second image")
    a.add_argument("--out", default=None, help=f"JSON output (default: ${OUT_ENV}/analysis.json)")
    a.set_defaults(func=cmd_analyze)

    ph = sub.add_parser("phantom", help="generate synthetic phantoms", formatter_class=fmt, epilog=epilog)
    ph.add_argument("--n", type=int, default=10, help="number of phantoms")
    ph.add_argument("--size", type=int, default=64, help="phantom side length (even)")
    ph.add_argument("--seed", type=int, default=0, help="generator seed")
    ph.add_argument("--out", default=None, help=f"dataset directory (default: ${OUT_ENV}/phantoms)")
    ph.add_argument("--split", default="train", help="split recorded in the manifest")
    ph.add_argument("--simulate-ldct", type=float, default=None, metavar="DOSE",
                    help="also write low-dose versions at this dose factor (ids suffixed _ldct)")
    ph.set_defaults(func=cmd_phantom)
    return p


def run(argv: Optional[Sequence[str]] = None) -> CommandResult:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except HFDenoiseError as exc:
        return CommandResult(exc.exit_code, [], f"error: {exc}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    result = run(argv)
    stream = sys.stdout if result.exit_code == 0 else sys.stderr
    print(result.summary, file=stream)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
