"""Pinhole-camera reprojection, bilinear warping, and flow consistency checks.

Conventions used throughout the package:

* Pixel centers sit at integer coordinates, origin at the top-left pixel,
  x = column, y = row.  A coordinate is in bounds iff 0 <= x <= W-1 and
  0 <= y <= H-1 (the pixel-center bounding box).
* Poses are camera-to-world rigid transforms.
* Depth is measured along the optical axis; non-finite values are the
  sentinel for sky / no-hit pixels.
* Flow fields map reference pixels to target pixels: target = x + flow(x).

All raster operations are pure functions over torch tensors and are
differentiable where that makes sense (sampling, warping, consistency
residuals), so the same code paths serve ground-truth generation and
gradient-checked network training.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch

logger = logging.getLogger(__name__)

POSE_ORTHONORMAL_TOL = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics with zero skew.

    K is upper triangular with K[2,2] = 1 and positive focal lengths.
    """

    K: np.ndarray

    def __post_init__(self):
        K = np.asarray(self.K, dtype=np.float64)
        if K.shape != (3, 3):
            raise ValueError(f"intrinsics must be 3x3, got {K.shape}")
        if not (K[0, 0] > 0 and K[1, 1] > 0):
            raise ValueError("focal lengths must be positive")
        lower = (K[1, 0], K[2, 0], K[2, 1])
        if any(v != 0.0 for v in lower) or K[0, 1] != 0.0:
            raise ValueError("intrinsics must be upper triangular with zero skew")
        if K[2, 2] != 1.0:
            raise ValueError("K[2,2] must be 1")
        object.__setattr__(self, "K", K)

    @classmethod
    def from_params(cls, fx: float, fy: float, cx: float, cy: float) -> "CameraIntrinsics":
        K = np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]], dtype=np.float64)
        return cls(K)

    @property
    def fx(self) -> float:
        return float(self.K[0, 0])

    @property
    def fy(self) -> float:
        return float(self.K[1, 1])

    @property
    def cx(self) -> float:
        return float(self.K[0, 2])

    @property
    def cy(self) -> float:
        return float(self.K[1, 2])

    def scaled(self, factor: float) -> "CameraIntrinsics":
        """Intrinsics for an image resampled by `factor` in both axes."""
        return CameraIntrinsics.from_params(
            self.fx * factor, self.fy * factor, self.cx * factor, self.cy * factor
        )


@dataclass(frozen=True)
class Pose:
    """Camera-to-world rigid transform as a 4x4 matrix."""

    E: np.ndarray

    def __post_init__(self):
        E = np.asarray(self.E, dtype=np.float64)
        if E.shape != (4, 4):
            raise ValueError(f"pose must be 4x4, got {E.shape}")
        if not np.array_equal(E[3], np.array([0.0, 0.0, 0.0, 1.0])):
            raise ValueError("pose last row must be (0, 0, 0, 1)")
        R = E[:3, :3]
        if not np.all(np.isfinite(R)):
            raise ValueError("pose rotation must be finite")
        err = np.abs(R @ R.T - np.eye(3)).max()
        if err > POSE_ORTHONORMAL_TOL:
            raise ValueError(f"rotation block not orthonormal (max error {err:.3e})")
        if np.linalg.det(R) < 0:
            raise ValueError("rotation block must have determinant +1")
        object.__setattr__(self, "E", E)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(4))

    @classmethod
    def from_rt(cls, R: np.ndarray, t: np.ndarray) -> "Pose":
        E = np.eye(4)
        E[:3, :3] = np.asarray(R, dtype=np.float64)
        E[:3, 3] = np.asarray(t, dtype=np.float64).reshape(3)
        return cls(E)

    @property
    def R(self) -> np.ndarray:
        return self.E[:3, :3]

    @property
    def t(self) -> np.ndarray:
        return self.E[:3, 3]

    def inverse(self) -> "Pose":
        R = self.R.T
        t = -R @ self.t
        return Pose.from_rt(_orthonormalize(R), t)

    def compose(self, other: "Pose") -> "Pose":
        """Transform equal to applying `other` first, then this pose."""
        E = self.E @ other.E
        return Pose.from_rt(_orthonormalize(E[:3, :3]), E[:3, 3])


def _orthonormalize(R: np.ndarray) -> np.ndarray:
    # Project back onto SO(3) so validated composes stay within tolerance.
    u, _, vt = np.linalg.svd(R)
    out = u @ vt
    if np.linalg.det(out) < 0:
        out = u @ np.diag([1.0, 1.0, -1.0]) @ vt
    return out


def pixel_grid(h: int, w: int, dtype=torch.float64, device=None) -> torch.Tensor:
    """(H, W, 2) raster of pixel coordinates with grid[r, c] = (c, r)."""
    ys = torch.arange(h, dtype=dtype, device=device)
    xs = torch.arange(w, dtype=dtype, device=device)
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    return torch.stack((gx, gy), dim=-1)


def _as_tensor(a, dtype=None) -> torch.Tensor:
    if isinstance(a, torch.Tensor):
        return a if dtype is None else a.to(dtype)
    return torch.as_tensor(np.asarray(a), dtype=dtype)


def bilinear_sample(field: torch.Tensor, coords: torch.Tensor):
    """Sample `field` (H, W, C) at fractional pixel coordinates.

    coords has shape (..., 2) in (x, y) order.  Returns (values, in_bounds)
    where values is (..., C).  A sample is in bounds iff it lies inside the
    pixel-center box [0, W-1] x [0, H-1]; corners falling outside contribute
    zero, which also makes fully out-of-bounds samples exactly zero.
    Sampling at integer coordinates reproduces field values bit-exactly.
    """
    if field.dim() == 2:
        field = field.unsqueeze(-1)
        squeeze = True
    else:
        squeeze = False
    h, w, c = field.shape
    x = coords[..., 0]
    y = coords[..., 1]

    x0 = torch.floor(x)
    y0 = torch.floor(y)
    wx = x - x0
    wy = y - y0

    x0i = x0.long()
    y0i = y0.long()
    x1i = x0i + 1
    y1i = y0i + 1

    def corner(xi, yi):
        ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        xi_c = xi.clamp(0, w - 1)
        yi_c = yi.clamp(0, h - 1)
        flat = (yi_c * w + xi_c).reshape(-1)
        vals = field.reshape(h * w, c)[flat].reshape(*xi.shape, c)
        # where, not multiply: a clamped gather may fetch non-finite values
        # that a zero weight would fail to silence (NaN * 0 = NaN)
        return torch.where(ok.unsqueeze(-1), vals, torch.zeros((), dtype=field.dtype))

    v00 = corner(x0i, y0i)
    v01 = corner(x1i, y0i)
    v10 = corner(x0i, y1i)
    v11 = corner(x1i, y1i)

    wx = wx.unsqueeze(-1)
    wy = wy.unsqueeze(-1)
    values = (
        v00 * (1 - wx) * (1 - wy)
        + v01 * wx * (1 - wy)
        + v10 * (1 - wx) * wy
        + v11 * wx * wy
    )
    in_bounds = (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)
    if squeeze:
        values = values.squeeze(-1)
    return values, in_bounds


def warp_bilinear(field, flow):
    """Warp `field` (H, W[, C]) by `flow` (H, W, 2): out(x) = field(x + flow(x)).

    Returns (warped, valid) where valid is false wherever the sampling point
    leaves the image bounds.
    """
    field = _as_tensor(field)
    flow = _as_tensor(flow)
    if flow.shape[-1] != 2 or flow.dim() != 3:
        raise ValueError(f"flow must be (H, W, 2), got {tuple(flow.shape)}")
    if field.shape[0] != flow.shape[0] or field.shape[1] != flow.shape[1]:
        raise ValueError(
            f"field {tuple(field.shape)} and flow {tuple(flow.shape)} disagree on H, W"
        )
    h, w = flow.shape[:2]
    coords = pixel_grid(h, w, dtype=flow.dtype, device=flow.device) + flow
    return bilinear_sample(field, coords)


def reproject(ref_camera: CameraIntrinsics, ref_pose: Pose, ref_depth,
              tgt_camera: CameraIntrinsics, tgt_pose: Pose):
    """Flow from the reference view into the target view via depth.

    Each reference pixel with usable depth is lifted to 3D, expressed in the
    target camera, and projected with an explicit homogeneous division;
    the flow is the projected position minus the pixel position.  The valid
    mask is false where depth is sentinel (non-finite or <= 0), the point
    falls behind the target camera, or the projection leaves the target
    image bounds.

    Returns (flow, valid, z_target): z_target is the target-camera depth of
    each reprojected point (useful for z-buffer visibility tests), zero
    where the projection is undefined.
    """
    depth = _as_tensor(ref_depth, dtype=torch.float64)
    if depth.dim() != 2:
        raise ValueError(f"depth must be (H, W), got {tuple(depth.shape)}")
    h, w = depth.shape

    T = np.linalg.inv(tgt_pose.E) @ ref_pose.E  # reference camera -> target camera
    if not np.all(np.isfinite(T)):
        raise ValueError("relative pose is not invertible")
    Tt = torch.as_tensor(T, dtype=torch.float64)
    K_r_inv = torch.as_tensor(np.linalg.inv(ref_camera.K), dtype=torch.float64)
    K_t = torch.as_tensor(tgt_camera.K, dtype=torch.float64)

    usable = torch.isfinite(depth) & (depth > 0)
    if not bool(usable.any()):
        logger.warning("reproject: depth raster contains no usable pixels")
        zeros = torch.zeros((h, w, 2), dtype=torch.float64)
        return zeros, torch.zeros((h, w), dtype=torch.bool), torch.zeros((h, w), dtype=torch.float64)

    if np.array_equal(T, np.eye(4)) and np.array_equal(ref_camera.K, tgt_camera.K):
        # identical views: the exact answer is zero flow; the general path
        # would leave ~1e-14 round-off that spuriously fails border pixels
        flow = torch.zeros((h, w, 2), dtype=torch.float64)
        z = torch.where(usable, depth, torch.zeros(()).double())
        return flow, usable.clone(), z

    grid = pixel_grid(h, w)
    ones = torch.ones((h, w, 1), dtype=torch.float64)
    pix_h = torch.cat((grid, ones), dim=-1)  # (H, W, 3)

    d = torch.where(usable, depth, torch.zeros(()).double())
    rays = pix_h @ K_r_inv.T  # (H, W, 3), camera-frame directions with z = 1
    pts_ref = rays * d.unsqueeze(-1)
    pts_tgt = pts_ref @ Tt[:3, :3].T + Tt[:3, 3]
    z = pts_tgt[..., 2]

    proj = pts_tgt @ K_t.T
    front = z > 0
    denom = torch.where(front, proj[..., 2], torch.ones(()).double())
    px = proj[..., 0] / denom
    py = proj[..., 1] / denom

    defined = usable & front
    flow = torch.stack((px, py), dim=-1) - grid
    flow = torch.where(defined.unsqueeze(-1), flow, torch.zeros(()).double())

    in_bounds = (px >= 0) & (px <= w - 1) & (py >= 0) & (py <= h - 1)
    valid = defined & in_bounds
    z_out = torch.where(defined, z, torch.zeros(()).double())
    return flow, valid, z_out


def fb_valid_mask(m_r, m_t, alpha1: float = 0.05, alpha2: float = 0.5):
    """Forward-backward consistency mask for a flow pair.

    The backward field is sampled bilinearly at the forward-warped location
    x + m_r(x).  A pixel is valid iff

        |m_r + m_t_warped|^2 < alpha1 * (|m_r|^2 + |m_t_warped|^2) + alpha2

    holds strictly and the warp stays inside the target bounds.
    """
    if alpha1 < 0 or alpha2 < 0:
        raise ValueError("consistency coefficients must be non-negative")
    m_r = _as_tensor(m_r)
    m_t = _as_tensor(m_t)
    if m_r.dim() != 3 or m_r.shape[-1] != 2:
        raise ValueError(f"forward flow must be (H, W, 2), got {tuple(m_r.shape)}")
    m_t_w, in_bounds = warp_bilinear(m_t, m_r)
    residual = ((m_r + m_t_w) ** 2).sum(dim=-1)
    magnitude = (m_r ** 2).sum(dim=-1) + (m_t_w ** 2).sum(dim=-1)
    threshold = alpha1 * magnitude + alpha2
    return (residual < threshold) & in_bounds
