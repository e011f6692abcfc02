"""Checkpoint evaluation over a dataset: matching metrics, confidence, pose.

The text report is a flat `key = value` file ('#' starts a comment), written
with fixed float precision so the bytes are stable for a fixed checkpoint,
manifest, and config:

    fingerprint = <network config sha256>
    samples_total / samples_evaluated / samples_failed = <int>
    aepe = <px>                  mean of per-sample AEPE, manifest order
    pck_<T> = <percent>          one line per configured threshold
    f1 = <percent>
    pose_evaluated = <int>       samples with camera ground truth
    pose_auc_<T> = <fraction>    one line per configured degree threshold
    sample_<idx> = aepe=<..> pck_<T>=<..> ... f1=<..> pose_deg=<..>
    failure_<k> = <idx>: <message>

Pose AUC is the exact area under the step CDF of pose errors, clipped at
each threshold (failed estimates count as 180 degrees).  Samples that fail
to load or evaluate are recorded and skipped; they never abort the sweep.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from ..synth import read_sample
from .matches import balanced_sample
from .metrics import aepe, auc, f1_outliers, pck
from .pose import estimate_pose, pose_error, relative_pose

PCK_CURVE_GRID = tuple(0.25 * k for k in range(1, 21))  # plot grid, 0.25..5 px
HEATMAP_LIMIT = 4  # error heatmaps are written for this many samples


@dataclass(frozen=True)
class SampleMetrics:
    """Per-sample numbers, kept so reports stay inspectable after the sweep."""

    index: int
    aepe: float
    pck: tuple          # aligned with the configured pixel thresholds
    f1: float
    pose_deg: float | None  # None when the sample carries no camera truth


@dataclass(frozen=True)
class MetricReport:
    fingerprint: str
    pck_thresholds: tuple
    auc_thresholds: tuple
    samples_total: int
    samples_evaluated: int
    aepe: float | None
    pck: tuple | None       # percents, aligned with pck_thresholds
    f1: float | None
    pose_evaluated: int
    pose_auc: tuple | None  # fractions, aligned with auc_thresholds
    samples: tuple          # SampleMetrics in manifest order
    failures: tuple         # (sample index, message)

    def __post_init__(self):
        if self.pck is not None and any(not 0.0 <= v <= 100.0 for v in self.pck):
            raise ValueError("PCK must lie in [0, 100] percent")
        if self.f1 is not None and not 0.0 <= self.f1 <= 100.0:
            raise ValueError("F1 must lie in [0, 100] percent")
        if self.pose_auc is not None and any(not 0.0 <= v <= 1.0 for v in self.pose_auc):
            raise ValueError("AUC must lie in [0, 1]")


def pad_to_multiple(x: torch.Tensor, multiple: int = 8):
    """Edge-replicate (B, C, H, W) on the bottom/right up to the next multiple.

    Returns the padded tensor and the original (H, W) for cropping back.
    """
    h, w = x.shape[-2:]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return x, (h, w)
    return F.pad(x, (0, pw, 0, ph), mode="replicate"), (h, w)


def _to_nchw(image: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(image.copy()).permute(2, 0, 1).unsqueeze(0)


def _evaluate_sample(sp, model, head, config):
    """Metrics for one pair: (SampleMetrics fields, epe array for plots)."""
    ref, size = pad_to_multiple(_to_nchw(sp.ref.image))
    tgt, _ = pad_to_multiple(_to_nchw(sp.tgt.image))
    h, w = size
    with torch.no_grad():
        flow_pad = model(ref, tgt).final  # (1, 2, Hp, Wp)
        if head is not None:
            from ..uncertainty import predict, residuals  # lazy: avoids import cycle

            feats_r = model.half_scale_features(ref)
            feats_t = model.half_scale_features(tgt)
            stack = residuals(ref, tgt, feats_r, feats_t, flow_pad)
            p_hat = predict(stack, head)[:, :h, :w]  # (1, H, W)
        else:
            p_hat = torch.ones(1, h, w)
    flow = flow_pad[:, :, :h, :w]

    pred = flow[0].permute(1, 2, 0).numpy()  # (H, W, 2)
    gt = sp.flow_gt
    mask = sp.valid
    sample_aepe = aepe(pred, gt, mask)
    sample_pck = tuple(pck(pred, gt, mask, t) for t in config.pck_thresholds)
    sample_f1 = f1_outliers(pred, gt, mask)

    pose_deg = None
    if sp.ref.pose is not None and sp.tgt.pose is not None:
        matches = balanced_sample(flow[0], p_hat[0], config.confidence_threshold,
                                  config.max_matches, config.seed)
        est = estimate_pose(matches, sp.intrinsics, sp.intrinsics, seed=config.seed)
        R_gt, t_gt = relative_pose(sp.ref.pose, sp.tgt.pose)
        pose_deg = pose_error(est, R_gt, t_gt)

    err = np.linalg.norm(pred - gt, axis=-1)
    epe_masked = err[mask]
    return sample_aepe, sample_pck, sample_f1, pose_deg, epe_masked, err


def evaluate(manifest, checkpoint, config, out_dir=None) -> "MetricReport":
    """Sweep a checkpoint over every sample a manifest lists.

    Images are padded to divisible-by-8 and predictions cropped back, so any
    resolution evaluates.  Per-sample failures are recorded in the report
    instead of aborting.  When `out_dir` is given the text report (and plots,
    if configured) are written there.
    """
    from ..pipeline import restore_head, restore_model  # lazy: avoids import cycle
    from ..netcore import load_checkpoint

    tensors, ckpt_manifest = load_checkpoint(checkpoint)
    model = restore_model(tensors, ckpt_manifest)
    if config.full_iterations:
        model.config = model.config.with_full_iterations()
    model.eval()
    head = restore_head(tensors, ckpt_manifest)
    if head is not None:
        head.eval()

    rows = []
    failures = []
    pose_errors = []
    pck_curves = []  # per-sample PCK on the fixed plot grid
    heatmaps = []
    for idx in range(len(manifest)):
        try:
            sp = read_sample(manifest.sample_path(idx))
            s_aepe, s_pck, s_f1, pose_deg, epe, err_map = _evaluate_sample(
                sp, model, head, config
            )
            if s_aepe is None:
                raise ValueError("no valid pixels to evaluate")
        except Exception as e:  # noqa: BLE001 -- fault isolation is the contract
            failures.append((idx, f"{type(e).__name__}: {e}"))
            continue
        rows.append(SampleMetrics(index=idx, aepe=s_aepe, pck=s_pck, f1=s_f1,
                                  pose_deg=pose_deg))
        if pose_deg is not None:
            pose_errors.append(pose_deg)
        pck_curves.append([100.0 * float(np.mean(epe < t)) for t in PCK_CURVE_GRID])
        if len(heatmaps) < HEATMAP_LIMIT:
            heatmaps.append((idx, err_map))

    # aggregation in manifest order: reports must not depend on worker layout
    n_eval = len(rows)
    report = MetricReport(
        fingerprint=ckpt_manifest["fingerprint"],
        pck_thresholds=tuple(config.pck_thresholds),
        auc_thresholds=tuple(config.auc_thresholds),
        samples_total=len(manifest),
        samples_evaluated=n_eval,
        aepe=float(np.mean([r.aepe for r in rows])) if rows else None,
        pck=tuple(float(np.mean([r.pck[i] for r in rows]))
                  for i in range(len(config.pck_thresholds))) if rows else None,
        f1=float(np.mean([r.f1 for r in rows])) if rows else None,
        pose_evaluated=len(pose_errors),
        pose_auc=tuple(auc(pose_errors, config.auc_thresholds)) if pose_errors else None,
        samples=tuple(rows),
        failures=tuple(failures),
    )
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_report(report, out_dir / "report.txt")
        if config.plots:
            write_plots(out_dir, report, pck_curves, pose_errors, heatmaps)
    return report


def render_report(report: MetricReport) -> str:
    """The documented key = value text form; byte-stable for fixed inputs."""

    def num(v):
        return "nan" if v is None else f"{v:.6f}"

    lines = [
        "# matching evaluation report",
        "# pose AUC: exact area under the pose-error step CDF, clipped per threshold",
        f"fingerprint = {report.fingerprint}",
        f"samples_total = {report.samples_total}",
        f"samples_evaluated = {report.samples_evaluated}",
        f"samples_failed = {len(report.failures)}",
        f"aepe = {num(report.aepe)}",
    ]
    for t, v in zip(report.pck_thresholds,
                    report.pck or [None] * len(report.pck_thresholds)):
        lines.append(f"pck_{t:g} = {num(v)}")
    lines.append(f"f1 = {num(report.f1)}")
    lines.append(f"pose_evaluated = {report.pose_evaluated}")
    for t, v in zip(report.auc_thresholds,
                    report.pose_auc or [None] * len(report.auc_thresholds)):
        lines.append(f"pose_auc_{t:g} = {num(v)}")
    for r in report.samples:
        parts = [f"aepe={r.aepe:.6f}"]
        parts += [f"pck_{t:g}={v:.6f}" for t, v in zip(report.pck_thresholds, r.pck)]
        parts.append(f"f1={r.f1:.6f}")
        if r.pose_deg is not None:
            parts.append(f"pose_deg={r.pose_deg:.6f}")
        lines.append(f"sample_{r.index} = " + " ".join(parts))
    for k, (idx, message) in enumerate(report.failures):
        lines.append(f"failure_{k} = {idx}: {message}")
    return "\n".join(lines) + "\n"


def write_report(report: MetricReport, path) -> Path:
    path = Path(path)
    path.write_text(render_report(report))
    return path


def write_plots(out_dir, report: MetricReport, pck_curves, pose_errors, heatmaps):
    """PCK-vs-threshold curve, per-pixel error heatmaps, pose-error CDF."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    written = []

    if pck_curves:
        mean_curve = np.mean(np.asarray(pck_curves), axis=0)
        fig, ax = plt.subplots(figsize=(5, 4))
        ax.plot(PCK_CURVE_GRID, mean_curve, marker="o", markersize=3)
        ax.set_xlabel("threshold [px]")
        ax.set_ylabel("PCK [%]")
        ax.set_ylim(0, 100)
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        path = out_dir / "pck_curve.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    for idx, err_map in heatmaps:
        fig, ax = plt.subplots(figsize=(5, 4))
        im = ax.imshow(err_map, cmap="magma")
        fig.colorbar(im, ax=ax, label="end-point error [px]")
        ax.set_axis_off()
        fig.tight_layout()
        path = out_dir / f"error_heatmap_{idx:04d}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    if pose_errors:
        errs = np.sort(np.asarray(pose_errors, dtype=np.float64))
        frac = np.arange(1, len(errs) + 1) / len(errs)
        fig, ax = plt.subplots(figsize=(5, 4))
        ax.step(errs, frac, where="post")
        ax.set_xlabel("pose error [deg]")
        ax.set_ylabel("fraction of pairs")
        ax.set_xlim(0, 180)
        ax.set_ylim(0, 1)
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        path = out_dir / "pose_cdf.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    return written
