"""Image-pair assembly: rendering, exact flow ground truth, and validity.

Precision contract: rasters are stored in float32, and every derived
quantity (flow, consistency mask, visibility test) is computed *from the
float32 values that get stored*, so reloading a sample and recomputing its
mask reproduces the stored decisions bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..geometry import CameraIntrinsics, fb_valid_mask, reproject, warp_bilinear
from .render import RenderedFrame, render
from .scene import SceneSpec

FB_ALPHA1 = 0.05
FB_ALPHA2 = 0.5
ZBUF_TOL = 1e-3
SUPERVISION_MODES = ("dense", "sparse")


@dataclass(frozen=True)
class SamplePair:
    ref: RenderedFrame  # float32 rasters
    tgt: RenderedFrame
    flow_gt: np.ndarray  # (H, W, 2) float32, reference -> target
    valid: np.ndarray    # (H, W) bool
    interval: int
    supervision: str
    intrinsics: CameraIntrinsics


def _quantize_frame(frame: RenderedFrame) -> RenderedFrame:
    """Float32 storage form; image goes through the same uint8 -> /255 path
    the file reader uses, making write/read round trips bit-exact."""
    q = np.round(frame.image * 255.0).astype(np.uint8)
    image32 = q.astype(np.float32) / np.float32(255.0)
    return RenderedFrame(image=image32, depth=frame.depth.astype(np.float32), pose=frame.pose)


def pair_flow_and_validity(scene: SceneSpec, i: int, j: int,
                           alpha1: float = FB_ALPHA1, alpha2: float = FB_ALPHA2,
                           zbuf_tol: float = ZBUF_TOL):
    """Flow plus masks for frames (i, j); all tensors derived from float32 rasters.

    Returns (ref32, tgt32, flow32, reachable, valid):
      * reachable — pixels whose reprojection is defined and lands in bounds
      * valid — reachable AND forward-backward consistent AND co-visible
        under the z-buffer test |warped target depth - reprojected depth| < tol
    """
    ref32 = _quantize_frame(render(scene, i))
    tgt32 = _quantize_frame(render(scene, j))
    K = scene.intrinsics

    flow64, reachable, z_tgt = reproject(K, ref32.pose, ref32.depth, K, tgt32.pose)
    flow_b64, _, _ = reproject(K, tgt32.pose, tgt32.depth, K, ref32.pose)
    flow32 = flow64.to(torch.float32)
    flow_b32 = flow_b64.to(torch.float32)

    fb = fb_valid_mask(flow32, flow_b32, alpha1, alpha2)

    z_warp, _ = warp_bilinear(torch.from_numpy(tgt32.depth), flow32)
    z_ok = torch.isfinite(z_warp) & ((z_warp - z_tgt.to(torch.float32)).abs() < zbuf_tol)

    valid = reachable & fb & z_ok
    return ref32, tgt32, flow32.numpy(), reachable.numpy(), valid.numpy()


def pair_validity(scene: SceneSpec, i: int, j: int):
    """(flow, reachable, valid) — the probe-sized slice of the pair pipeline."""
    _, _, flow, reachable, valid = pair_flow_and_validity(scene, i, j)
    return flow, reachable, valid


def sample_pair(scene: SceneSpec, i: int, interval: int,
                bounds=(15, 30), supervision: str = "sparse",
                alpha1: float = FB_ALPHA1, alpha2: float = FB_ALPHA2,
                zbuf_tol: float = ZBUF_TOL) -> SamplePair:
    """Rendered pair (i, i + interval) with exact flow and validity mask."""
    if supervision not in SUPERVISION_MODES:
        raise ValueError(f"supervision must be one of {SUPERVISION_MODES}")
    if not bounds[0] <= interval <= bounds[1]:
        raise ValueError(f"interval {interval} outside configured bounds {bounds}")
    if i < 0 or i + interval >= len(scene.trajectory):
        raise IndexError(
            f"pair ({i}, {i + interval}) outside trajectory of length {len(scene.trajectory)}"
        )
    ref32, tgt32, flow32, _, valid = pair_flow_and_validity(
        scene, i, i + interval, alpha1=alpha1, alpha2=alpha2, zbuf_tol=zbuf_tol
    )
    return SamplePair(
        ref=ref32,
        tgt=tgt32,
        flow_gt=flow32,
        valid=valid,
        interval=interval,
        supervision=supervision,
        intrinsics=scene.intrinsics,
    )
