"""Command-line entry point: ``mind <subcommand> ...``.

Exit status: 0 success, 1 runtime error, 2 usage error.  Logs go to stderr;
machine-readable output goes to stdout or the named files.
"""

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

logger = logging.getLogger("mind")


class _HelpFormatter(argparse.ArgumentDefaultsHelpFormatter):
    def __init__(self, prog):
        super().__init__(prog, width=88, max_help_position=32)


def _add(sub, name, help_text):
    return sub.add_parser(name, help=help_text, description=help_text, formatter_class=_HelpFormatter)


def build_parser():
    from .degrade import KINDS
    from .nle import DEFAULT_WINDOW, OPERATORS

    p = argparse.ArgumentParser(prog="mind", description="Noise-adaptive image denoising toolkit.", formatter_class=_HelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", metavar="command")
    sub.required = True

    s = _add(sub, "synth", "Degrade a clean image with one seeded noise family.")
    s.add_argument("--noise", choices=KINDS, required=True, help="noise family")
    s.add_argument("--level", type=float, required=True, help="sd fraction, speckle fraction, blur length (px) or poisson peak")
    s.add_argument("--angle", type=float, default=None, help="motion-blur angle in radians (random if omitted)")
    s.add_argument("--seed", type=int, default=0, help="noise seed")
    s.add_argument("--strict", action="store_true", help="reject levels outside the family's standard range")
    s.add_argument("--half-profile", type=float, default=None, metavar="LOW", help="scale noise by LOW on the left half (gaussian/speckle)")
    s.add_argument("--format", choices=("auto", "pgm8", "pgm16", "pfm"), default="auto", help="output format; auto picks from the suffix")
    s.add_argument("input", metavar="IN")
    s.add_argument("output", metavar="OUT")

    s = _add(sub, "estimate-noise", "Estimate a per-pixel noise sd map; prints its mean.")
    s.add_argument("--window", type=int, default=DEFAULT_WINDOW, help="odd averaging window (px)")
    s.add_argument("--operator", choices=sorted(OPERATORS), default="sobel", help="gradient operator")
    s.add_argument("--coarse", default=None, help="coarse clean estimate (default: Gaussian blur, sigma 1.5, of IN)")
    s.add_argument("--out-map", default=None, help="write the sigma map as PFM")
    s.add_argument("input", metavar="IN")

    s = _add(sub, "train", "Train a model from a JSON run config.")
    s.add_argument("--config", required=True, help="run config JSON")
    s.add_argument("--out", required=True, help="output directory for checkpoints and history")
    s.add_argument("--seed", type=int, default=None, help="override the config seed")
    s.add_argument("--resume", default=None, help="resume from this checkpoint")
    s.add_argument("--epochs-now", type=int, default=None, help="stop after this many epochs (resumable)")

    s = _add(sub, "denoise", "Denoise one image with a trained checkpoint.")
    s.add_argument("--ckpt", required=True, help="checkpoint file")
    s.add_argument("--dump-diagnostics", default=None, metavar="DIR", help="write spatial/alpha/sigma PFM maps here")
    s.add_argument("--format", choices=("auto", "pgm8", "pgm16", "pfm"), default="auto", help="output format")
    s.add_argument("input", metavar="IN")
    s.add_argument("output", metavar="OUT")

    s = _add(sub, "evaluate", "Score a checkpoint and baselines; paired t-tests per batch.")
    s.add_argument("--ckpt", required=True, help="checkpoint file")
    s.add_argument("--data", required=True, help="dataset root with clean/*.pgm")
    s.add_argument("--batches", type=int, default=8, help="number of disjoint evaluation batches")
    s.add_argument("--out", required=True, help="report JSON path")
    s.add_argument("--noise", choices=KINDS, default="gaussian", help="noise family")
    s.add_argument("--level", type=float, default=0.15, help="noise level")
    s.add_argument("--methods", default="mind,identity,gaussian_blur:1.2,median:3", help="comma-separated methods")
    s.add_argument("--seed", type=int, default=0, help="noise and batching seed")

    s = _add(sub, "ablate", "Train the four single-module ablations plus the full model; emit a table.")
    s.add_argument("--config", required=True, help="run config JSON for the full model")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--eval-data", required=True, help="dataset root with held-out clean/*.pgm")
    s.add_argument("--full-ckpt", default=None, help="reuse this checkpoint for the full model")
    s.add_argument("--batches", type=int, default=8, help="evaluation batches")
    s.add_argument("--noise", choices=KINDS, default=None, help="evaluation noise (default: from config, else gaussian)")
    s.add_argument("--level", type=float, default=None, help="evaluation noise level (default: from config, else 0.15)")
    s.add_argument("--seed", type=int, default=None, help="override the config seed")

    s = _add(sub, "curves", "Write the lambda(sigma) loss-weight curves as CSV.")
    s.add_argument("--config", default=None, help="run config JSON (default weights if omitted)")
    s.add_argument("--out", required=True, help="CSV path")
    s.add_argument("--start", type=float, default=0.0, help="first sigma (percent)")
    s.add_argument("--stop", type=float, default=30.0, help="last sigma (percent)")
    s.add_argument("--step", type=float, default=1.0, help="sigma increment (percent)")

    s = _add(sub, "gradcheck", "Finite-difference gradient checks in double precision.")
    s.add_argument("component", nargs="?", default=None, help="one component (default: all)")
    s.add_argument("--seed", type=int, default=0, help="seed for the random test problem")

    s = _add(sub, "phantoms", "Write a synthetic shapes/texture dataset to ROOT/clean.")
    s.add_argument("--count", type=int, default=24, help="number of images")
    s.add_argument("--size", type=int, default=128, help="side length (px)")
    s.add_argument("--seed", type=int, default=0, help="generator seed")
    s.add_argument("root", metavar="ROOT")
    return p


def _out_format(path, choice):
    from .imagedata import format_for_path

    return format_for_path(path) if choice == "auto" else choice


def cmd_synth(a):
    from .degrade import NoiseSpec, degrade, half_profile
    from .imagedata import read_image, write_image

    img = read_image(a.input)
    prof = None if a.half_profile is None else half_profile(img.shape, low=a.half_profile)
    spec = NoiseSpec(a.noise, a.level, a.angle, a.seed, prof)
    write_image(degrade(img, spec, strict=a.strict), a.output, _out_format(a.output, a.format))
    return 0


def cmd_estimate_noise(a):
    from .evalkit import baseline_denoise
    from .imagedata import read_image, write_image
    from .nle import estimate_sigma_map, sigma_scalar

    noisy = read_image(a.input)
    coarse = read_image(a.coarse) if a.coarse else baseline_denoise(noisy, "gaussian_blur", sigma=1.5)
    sig = estimate_sigma_map(noisy, coarse, a.window, a.operator)
    if a.out_map:
        write_image(sig, a.out_map, "pfm")
    print(f"{sigma_scalar(sig):.6f}")
    return 0


def cmd_train(a):
    from .trainer import RunConfig, train

    cfg = RunConfig.from_json(a.config)
    if a.seed is not None:
        cfg = cfg.replace(seed=a.seed)
    trainer, history = train(cfg, out_dir=a.out, resume_from=a.resume, stop_after_epochs=a.epochs_now)
    print(json.dumps({"steps": trainer.step, "final_loss": history[-1].total if history else None, "out": str(a.out)}))
    return 0


def cmd_denoise(a):
    import torch

    from .evalkit import emit_attention_maps
    from .imagedata import read_image, write_image
    from .trainer import load_model

    model, _ = load_model(a.ckpt)
    img = read_image(a.input)
    with torch.no_grad():
        out = model(img).denoised.numpy()[0, 0]
    write_image(out, a.output, _out_format(a.output, a.format))
    if a.dump_diagnostics:
        emit_attention_maps(model, img, a.dump_diagnostics)
    return 0


def _center_crop(img, multiple):
    h, w = img.shape
    h2, w2 = h - h % multiple, w - w % multiple
    r, c = (h - h2) // 2, (w - w2) // 2
    return img[r : r + h2, c : c + w2]


def cmd_evaluate(a):
    from .degrade import NoiseSpec
    from .evalkit import evaluate_run, report_json
    from .imagedata import load_dataset
    from .trainer import load_model

    model, _ = load_model(a.ckpt)
    images = [_center_crop(s.clean, model.config.multiple) for s in load_dataset(a.data)]
    methods = tuple(m.strip() for m in a.methods.split(",") if m.strip())
    reports, ttests = evaluate_run(images, model, [NoiseSpec(a.noise, a.level, seed=a.seed)], methods, a.batches, a.seed)
    Path(a.out).write_text(report_json(reports, ttests))
    if not all(r.all_finite() for r in reports):
        logger.error("non-finite metric in report")
        return 1
    return 0


def cmd_ablate(a):
    import torch

    from .degrade import NoiseSpec
    from .evalkit import ABLATIONS, ablation_rows, ablation_table_csv
    from .imagedata import load_dataset
    from .trainer import RunConfig, load_model, train

    cfg = RunConfig.from_json(a.config)
    if a.seed is not None:
        cfg = cfg.replace(seed=a.seed)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    models = {}
    for name, overrides in ABLATIONS:
        if name == "full" and a.full_ckpt:
            models[name] = load_model(a.full_ckpt)[0]
            continue
        logger.info("training configuration %s", name)
        trainer, _ = train(cfg.replace(**overrides), out_dir=out / name)
        models[name] = trainer.model.eval()
    kind = a.noise or (cfg.noise_kinds[0] if len(cfg.noise_kinds) == 1 and cfg.noise_level else "gaussian")
    level = a.level or (cfg.noise_level if a.noise is None and cfg.noise_level else 0.15)
    multiple = models["full"].config.multiple
    images = [_center_crop(s.clean, multiple) for s in load_dataset(a.eval_data)]
    with torch.no_grad():
        rows = ablation_rows(models, images, NoiseSpec(kind, level, seed=cfg.seed + 1), a.batches, cfg.seed)
    (out / "ablation.json").write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
    table = ablation_table_csv(rows)
    (out / "ablation.csv").write_text(table)
    sys.stdout.write(table)
    if not all(math.isfinite(r[k]) for r in rows for k in ("psnr", "ssim", "perc_proxy")):
        logger.error("non-finite metric in ablation table")
        return 1
    return 0


def cmd_curves(a):
    from .evalkit import emit_lambda_curve
    from .objective import LossWeightsConfig
    from .trainer import RunConfig

    cfg = RunConfig.from_json(a.config).loss_config() if a.config else LossWeightsConfig()
    emit_lambda_curve(cfg, a.start, a.stop, a.step, path=a.out)
    return 0


def cmd_gradcheck(a):
    from .gradcheck import REGISTRY, grad_check

    names = [a.component] if a.component else list(REGISTRY)
    failed = False
    for name in names:
        err = grad_check(name, seed=a.seed)
        tol = REGISTRY[name]["tol"]
        ok = err < tol
        failed |= not ok
        print(f"{name}\t{err:.3e}\ttol={tol:.0e}\t{'PASS' if ok else 'FAIL'}")
    return 1 if failed else 0


def cmd_phantoms(a):
    from .imagedata import make_phantom_dataset

    make_phantom_dataset(a.root, a.count, a.size, a.seed)
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "estimate-noise": cmd_estimate_noise,
    "train": cmd_train,
    "denoise": cmd_denoise,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "curves": cmd_curves,
    "gradcheck": cmd_gradcheck,
    "phantoms": cmd_phantoms,
}


def run_cli(argv=None):
    from .errors import MindError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except (MindError, OSError, ValueError) as exc:
        print(f"mind {args.command}: error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run_cli())


if __name__ == "__main__":  # pragma: no cover
    main()
