"""Flow accuracy metrics and pose-error AUC.

All flow metrics take fields of shape (..., 2) with a boolean mask over the
leading dimensions, so they are trivially invariant to pixel permutations.
An empty mask makes a metric undefined; that is reported as None rather
than raised, so sweep aggregation can count it instead of dying.
"""

from __future__ import annotations

import numpy as np
import torch


def _as_flow(a, name: str) -> np.ndarray:
    if isinstance(a, torch.Tensor):
        a = a.detach().cpu().numpy()
    a = np.asarray(a, dtype=np.float64)
    if a.ndim < 1 or a.shape[-1] != 2:
        raise ValueError(f"{name} must have a trailing (u, v) axis, got {a.shape}")
    return a


def _epe(pred, gt, mask):
    pred = _as_flow(pred, "pred")
    gt = _as_flow(gt, "gt")
    if pred.shape != gt.shape:
        raise ValueError(f"pred {pred.shape} and gt {gt.shape} differ")
    if isinstance(mask, torch.Tensor):
        mask = mask.detach().cpu().numpy()
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != pred.shape[:-1]:
        raise ValueError(f"mask {mask.shape} does not cover {pred.shape[:-1]}")
    err = np.linalg.norm(pred - gt, axis=-1)
    return err[mask], gt[mask]


def aepe(pred, gt, mask):
    """Mean endpoint error over masked pixels; None if the mask is empty."""
    err, _ = _epe(pred, gt, mask)
    if err.size == 0:
        return None
    return float(err.mean())


def pck(pred, gt, mask, threshold: float):
    """Percent of masked pixels with endpoint error strictly below `threshold`."""
    if threshold <= 0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    err, _ = _epe(pred, gt, mask)
    if err.size == 0:
        return None
    return float(100.0 * (err < threshold).mean())


def f1_outliers(pred, gt, mask):
    """Percent of masked pixels that are outliers: EPE > 3 px and > 5% of |gt|."""
    err, gt_masked = _epe(pred, gt, mask)
    if err.size == 0:
        return None
    mag = np.linalg.norm(gt_masked, axis=-1)
    outlier = (err > 3.0) & (err > 0.05 * mag)
    return float(100.0 * outlier.mean())


def auc(errors, thresholds=(5.0, 10.0, 20.0)):
    """Area under the cumulative pose-accuracy curve, one value per threshold.

    The empirical CDF of the error list is integrated exactly from 0 to each
    threshold tau and normalized by tau, which reduces to
    mean(max(0, 1 - e / tau)).  A single 5-degree error at tau = 10 scores
    0.5; an all-zero run scores 1 everywhere.
    """
    errs = np.asarray(list(errors), dtype=np.float64)
    if errs.size == 0:
        raise ValueError("errors must be non-empty")
    if (errs < 0).any():
        raise ValueError("errors must be non-negative")
    errs = np.sort(errs)  # fixed reduction order: bitwise order-invariant
    return [float(np.mean(np.clip(1.0 - errs / float(t), 0.0, 1.0))) for t in thresholds]
