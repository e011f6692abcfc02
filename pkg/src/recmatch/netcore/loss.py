"""Multi-scale matching loss.

Every recorded iterate is compared against the full-resolution ground truth
with an L1 penalty (|du| + |dv| per pixel).  Dense supervision averages over
all pixels; sparse supervision averages over the valid mask only.  Iterates
are weighted exponentially so later predictions dominate.
"""

from __future__ import annotations

import logging

import torch

logger = logging.getLogger(__name__)

SUPERVISION_MODES = ("dense", "sparse")


def iterate_weights(n: int, gamma: float) -> list:
    """gamma^(n-1-i) for i in 0..n-1: the last iterate gets weight 1."""
    return [gamma ** (n - 1 - i) for i in range(n)]


def loss_matching(preds, gt: torch.Tensor, valid, supervision: str,
                  gamma: float = 0.8, weights=None) -> torch.Tensor:
    """Weighted sum of per-iterate L1 terms.

    preds: MatchPrediction or list of (B, 2, H, W) flows; gt: (B, 2, H, W);
    valid: (B, H, W) bool (ignored in dense mode).  An empty mask in sparse
    mode contributes zero with a warning instead of NaN.
    """
    flows = preds.flows if hasattr(preds, "flows") else list(preds)
    if not flows:
        raise ValueError("no predictions to supervise")
    if supervision not in SUPERVISION_MODES:
        raise ValueError(f"supervision must be one of {SUPERVISION_MODES}")
    if weights is None:
        weights = iterate_weights(len(flows), gamma)
    weights = [float(w) for w in weights]
    if len(weights) != len(flows):
        raise ValueError(f"{len(weights)} weights for {len(flows)} predictions")
    if any(w <= 0 for w in weights):
        raise ValueError("weights must be positive")

    if supervision == "sparse":
        mask = valid.to(gt.dtype)
        denom = mask.sum()
        if denom.item() == 0:
            logger.warning("loss_matching: empty valid mask; sparse term contributes 0")

    total = gt.new_zeros(())
    for w, flow in zip(weights, flows):
        diff = (flow - gt).abs().sum(dim=1)  # (B, H, W): |du| + |dv|
        if supervision == "dense":
            term = diff.mean()
        else:
            if denom.item() == 0:
                term = diff.sum() * 0.0
            else:
                term = (diff * mask).sum() / denom
        total = total + w * term
    return total
