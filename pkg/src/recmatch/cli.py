"""Command-line entry point.

Subcommands:
    synth              generate a synthetic matching dataset
    train-matching     stage 1: train the matcher
    train-uncertainty  stage 2: train the confidence head on a frozen matcher
    match              run one image pair through a checkpoint
    eval               sweep a checkpoint over a dataset, write metrics
    report             same sweep with plots forced on

Every invocation creates its own run directory <root>/<timestamp>-seed<N>
(root: $RGM_RUN_ROOT if set, else --out, else ./runs) and writes the fully
resolved config there before any work starts.  Exit codes: 0 success,
1 input/config error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from .evalkit import evaluate
from .netcore import load_checkpoint
from .pipeline import (
    NumericalFailure,
    RunConfig,
    apply_overrides,
    load_config,
    preset,
    restore_head,
    restore_model,
    save_config,
    stage2_defaults,
    train_stage1,
    train_stage2,
)
from .synth import read_image_png, read_manifest, write_dataset, write_flo, write_image_png
from .uncertainty import predict, residuals, write_uncertainty_pgm

log = logging.getLogger("recmatch")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="recmatch",
        description="dense matching: synthesis, two-stage training, evaluation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI config file")
        p.add_argument("--preset", choices=("toy", "overfit", "paper-defaults"),
                       help="named config bundle applied before --config/--set")
        p.add_argument("--set", action="append", default=[], metavar="SEC.KEY=VAL",
                       help="config override, repeatable")
        p.add_argument("--seed", type=int, help="overrides the configured seed")
        p.add_argument("--out", help="output root (default ./runs)")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--pairs", type=int, help="shorthand for --set dataset.pairs=N")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("train-matching", help="stage 1: train the matcher")
    common(p)
    p.add_argument("--data", action="append", default=[],
                   help="dataset manifest (repeatable; omitted = synthesize first)")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("train-uncertainty", help="stage 2: train the confidence head")
    common(p)
    p.add_argument("--checkpoint", required=True, help="stage-1 checkpoint")
    p.add_argument("--data", action="append", default=[])
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("match", help="match one image pair")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--ref", required=True, help="reference image (PNG)")
    p.add_argument("--tgt", required=True, help="target image (PNG)")

    for name in ("eval", "report"):
        p = sub.add_parser(name, help="checkpoint metrics over a dataset"
                           + (" (with plots)" if name == "report" else ""))
        common(p)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--data", required=True, help="dataset manifest")

    return parser


def _resolve_config(args) -> RunConfig:
    cfg = preset(args.preset) if args.preset else RunConfig()
    if args.config:
        cfg = load_config(args.config, base=cfg)
    if args.set:
        cfg = apply_overrides(cfg, args.set)
    if args.seed is not None:
        cfg = apply_overrides(cfg, [f"train.seed={args.seed}", f"eval.seed={args.seed}"])
    if getattr(args, "pairs", None) is not None:
        cfg = apply_overrides(cfg, [f"dataset.pairs={args.pairs}"])
    return cfg


def _make_run_dir(args, seed: int) -> Path:
    root = os.environ.get("RGM_RUN_ROOT") or args.out or "runs"
    stamp = time.strftime("%Y%m%d-%H%M%S")
    base = Path(root) / f"{stamp}-seed{seed}"
    path, k = base, 1
    while path.exists():  # same-second reruns get a numeric suffix
        path = base.with_name(f"{base.name}-{k}")
        k += 1
    path.mkdir(parents=True)
    return path


def _start_run(args, cfg: RunConfig, seed: int) -> Path:
    run_dir = _make_run_dir(args, seed)
    save_config(cfg, run_dir / "config.ini")
    log.info("run directory: %s", run_dir)
    log.info("seed: %d", seed)
    log.info("resolved config written to %s", run_dir / "config.ini")
    return run_dir


def _manifest_at(path) -> "object":
    p = Path(path)
    if p.is_dir():
        p = p / "manifest.txt"
    return read_manifest(p)


def _training_data(args, cfg: RunConfig, run_dir: Path, seed: int):
    if args.data:
        manifests = [_manifest_at(d) for d in args.data]
    else:
        log.info("no --data given; synthesizing %d pairs first", cfg.dataset.pairs)
        manifests = [write_dataset(run_dir / "dataset", seed=seed, config=cfg.dataset,
                                   workers=args.workers)]
    train = cfg.train
    if len(train.mixture) == 1 and len(manifests) > 1:
        train = replace(train, mixture=tuple(1.0 for _ in manifests))
    return manifests, train


def _cmd_synth(args) -> int:
    cfg = _resolve_config(args)
    seed = args.seed if args.seed is not None else cfg.train.seed
    run_dir = _start_run(args, cfg, seed)
    manifest = write_dataset(run_dir / "dataset", seed=seed, config=cfg.dataset,
                             workers=args.workers)
    log.info("wrote %d pairs to %s", len(manifest), manifest.root)
    print(manifest.root / "manifest.txt")
    return 0


def _cmd_train_matching(args) -> int:
    cfg = _resolve_config(args)
    run_dir = _start_run(args, cfg, cfg.train.seed)
    manifests, train = _training_data(args, cfg, run_dir, cfg.train.seed)
    result = train_stage1(train, cfg.net, manifests, run_dir, resume=args.resume)
    log.info("final loss: %.6f", result.losses[-1][1])
    print(result.checkpoint_path)
    return 0


def _cmd_train_uncertainty(args) -> int:
    cfg = _resolve_config(args)
    if cfg.train.stage != "uncertainty":
        cfg = replace(cfg, train=stage2_defaults(cfg.train))
        if args.seed is not None:
            cfg = apply_overrides(cfg, [f"train.seed={args.seed}"])
    run_dir = _start_run(args, cfg, cfg.train.seed)
    manifests, train = _training_data(args, cfg, run_dir, cfg.train.seed)
    result = train_stage2(train, args.checkpoint, manifests, run_dir)
    log.info("matcher hash unchanged: %s", result.matching_hash_before)
    log.info("matcher gradient norm: %.1f", result.matching_grad_norm)
    print(result.checkpoint_path)
    return 0


def flow_to_color(flow: np.ndarray) -> np.ndarray:
    """(H, W, 2) flow -> (H, W, 3) color wheel image in [0, 1]."""
    from matplotlib.colors import hsv_to_rgb

    u, v = flow[..., 0], flow[..., 1]
    mag = np.hypot(u, v)
    scale = np.percentile(mag, 99) if mag.max() > 0 else 1.0
    hsv = np.stack([
        (np.arctan2(-v, -u) / np.pi + 1.0) / 2.0,  # angle -> hue
        np.clip(mag / max(scale, 1e-9), 0.0, 1.0),  # magnitude -> saturation
        np.ones_like(mag),
    ], axis=-1)
    return hsv_to_rgb(hsv).astype(np.float32)


def _cmd_match(args) -> int:
    from .evalkit.report import pad_to_multiple

    cfg = _resolve_config(args)
    seed = args.seed if args.seed is not None else cfg.eval.seed
    run_dir = _start_run(args, cfg, seed)

    ref_img = read_image_png(args.ref)
    tgt_img = read_image_png(args.tgt)
    if ref_img.shape != tgt_img.shape:
        raise ValueError(f"image sizes differ: {ref_img.shape} vs {tgt_img.shape}")
    ref = torch.from_numpy(ref_img).permute(2, 0, 1).unsqueeze(0)
    tgt = torch.from_numpy(tgt_img).permute(2, 0, 1).unsqueeze(0)
    ref_pad, (h, w) = pad_to_multiple(ref)
    tgt_pad, _ = pad_to_multiple(tgt)

    tensors, manifest = load_checkpoint(args.checkpoint)
    model = restore_model(tensors, manifest)
    if cfg.eval.full_iterations:
        model.config = model.config.with_full_iterations()
    model.eval()
    head = restore_head(tensors, manifest)
    with torch.no_grad():
        flow_pad = model(ref_pad, tgt_pad).final
        if head is not None:
            head.eval()
            stack = residuals(ref_pad, tgt_pad, model.half_scale_features(ref_pad),
                              model.half_scale_features(tgt_pad), flow_pad)
            p_hat = predict(stack, head)[0, :h, :w].numpy()
        else:
            log.info("checkpoint has no confidence head; writing all-ones map")
            p_hat = np.ones((h, w), dtype=np.float32)
    flow = flow_pad[0, :, :h, :w].permute(1, 2, 0).numpy()

    write_flo(run_dir / "flow.flo", flow)
    write_uncertainty_pgm(run_dir / "uncertainty.pgm", p_hat)
    vis = np.concatenate([ref_img, tgt_img, flow_to_color(flow)], axis=1)
    write_image_png(run_dir / "match_vis.png", vis)
    log.info("wrote flow.flo, uncertainty.pgm, match_vis.png to %s", run_dir)
    print(run_dir)
    return 0


def _cmd_eval(args, plots: bool) -> int:
    cfg = _resolve_config(args)
    if plots:
        cfg = replace(cfg, eval=replace(cfg.eval, plots=True))
    run_dir = _start_run(args, cfg, cfg.eval.seed)
    manifest = _manifest_at(args.data)
    report = evaluate(manifest, args.checkpoint, cfg.eval, out_dir=run_dir)
    for line in (run_dir / "report.txt").read_text().splitlines():
        if line.startswith(("aepe", "pck_", "f1", "pose_auc_", "samples_")):
            log.info("%s", line)
    print(run_dir / "report.txt")
    if report.samples_evaluated == 0:
        log.error("no sample could be evaluated")
        return 2
    return 0


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 1  # argparse uses 2 for usage errors

    try:
        if args.command == "synth":
            return _cmd_synth(args)
        if args.command == "train-matching":
            return _cmd_train_matching(args)
        if args.command == "train-uncertainty":
            return _cmd_train_uncertainty(args)
        if args.command == "match":
            return _cmd_match(args)
        if args.command == "eval":
            return _cmd_eval(args, plots=False)
        if args.command == "report":
            return _cmd_eval(args, plots=True)
        raise AssertionError(f"unreachable command {args.command}")
    except NumericalFailure as e:
        log.error("numerical failure: %s", e)
        return 2
    except (ValueError, OSError, KeyError) as e:
        log.error("%s", e)
        return 1


def main() -> None:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    sys.exit(run())


if __name__ == "__main__":
    main()
