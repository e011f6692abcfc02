"""Sparse correspondence sets and spatially balanced sampling.

A MatchSet is the bridge between dense flow and two-view geometry: pixel
coordinates in the reference image, their flow targets, and a confidence
score per match.  Emptiness is an explicit, legal state ("no confident
matches"), never an exception.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

GRID_CELLS = 8  # balanced sampling partitions the image into an 8x8 cell grid


@dataclass(frozen=True)
class MatchSet:
    """Correspondences (x_ref, x_tgt, confidence), coordinates in (x, y)."""

    x_ref: np.ndarray       # (N, 2) float64 pixel coordinates, reference image
    x_tgt: np.ndarray       # (N, 2) float64 pixel coordinates, target image
    confidence: np.ndarray  # (N,) float64 in (0, 1]

    def __post_init__(self):
        x_ref = np.asarray(self.x_ref, dtype=np.float64).reshape(-1, 2)
        x_tgt = np.asarray(self.x_tgt, dtype=np.float64).reshape(-1, 2)
        conf = np.asarray(self.confidence, dtype=np.float64).reshape(-1)
        if not (len(x_ref) == len(x_tgt) == len(conf)):
            raise ValueError("x_ref, x_tgt, confidence lengths differ")
        if len(conf) and ((conf <= 0).any() or (conf > 1).any()):
            raise ValueError("confidence must lie in (0, 1]")
        if len(x_ref) != len(np.unique(x_ref, axis=0)):
            raise ValueError("duplicate reference coordinates")
        object.__setattr__(self, "x_ref", x_ref)
        object.__setattr__(self, "x_tgt", x_tgt)
        object.__setattr__(self, "confidence", conf)

    def __len__(self) -> int:
        return len(self.confidence)

    @property
    def is_empty(self) -> bool:
        return len(self) == 0


def _empty_match_set() -> MatchSet:
    z = np.zeros((0, 2), dtype=np.float64)
    return MatchSet(z, z, np.zeros((0,), dtype=np.float64))


def balanced_sample(flow, uncertainty, threshold: float, n: int, seed: int) -> MatchSet:
    """Draw up to `n` confident matches, spread evenly over the image.

    flow: (2, H, W) dense flow in pixels; uncertainty: (H, W) scores in
    (0, 1).  Pixels with score >= threshold whose flow target stays inside
    the image are candidates.  The image is split into an 8x8 cell grid and
    cells are visited round-robin, each contributing one uniform draw per
    round, until `n` matches or every cell is exhausted.  Deterministic for
    a fixed seed.
    """
    if n < 8:
        raise ValueError(f"n must be >= 8, got {n}")
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    if isinstance(flow, torch.Tensor):
        flow = flow.detach().cpu().numpy()
    if isinstance(uncertainty, torch.Tensor):
        uncertainty = uncertainty.detach().cpu().numpy()
    flow = np.asarray(flow, dtype=np.float64)
    score = np.asarray(uncertainty, dtype=np.float64)
    if flow.ndim != 3 or flow.shape[0] != 2:
        raise ValueError(f"flow must be (2, H, W), got {flow.shape}")
    h, w = flow.shape[1:]
    if score.shape != (h, w):
        raise ValueError(f"uncertainty shape {score.shape} != {(h, w)}")

    ys, xs = np.nonzero(score >= threshold)
    if len(xs) == 0:
        return _empty_match_set()
    tx = xs + flow[0, ys, xs]
    ty = ys + flow[1, ys, xs]
    inside = (tx >= 0) & (tx <= w - 1) & (ty >= 0) & (ty <= h - 1)
    xs, ys, tx, ty = xs[inside], ys[inside], tx[inside], ty[inside]
    if len(xs) == 0:
        return _empty_match_set()

    # assign candidates to grid cells (row-major cell index)
    cell_h = -(-h // GRID_CELLS)
    cell_w = -(-w // GRID_CELLS)
    cell = (ys // cell_h) * GRID_CELLS + (xs // cell_w)

    rng = np.random.default_rng(seed)
    queues = []
    for c in np.unique(cell):
        members = np.nonzero(cell == c)[0]
        queues.append(rng.permutation(members))

    picked = []
    depth = 0
    while len(picked) < n:
        advanced = False
        for q in queues:
            if depth < len(q):
                picked.append(q[depth])
                advanced = True
                if len(picked) == n:
                    break
        if not advanced:
            break
        depth += 1

    idx = np.array(picked, dtype=np.int64)
    conf = np.clip(score[ys[idx], xs[idx]], np.finfo(np.float64).tiny, 1.0)
    return MatchSet(
        np.stack([xs[idx], ys[idx]], axis=1).astype(np.float64),
        np.stack([tx[idx], ty[idx]], axis=1),
        conf,
    )
