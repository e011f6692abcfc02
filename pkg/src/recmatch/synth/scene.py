"""Procedural scene specifications: textured primitives plus a smooth camera path.

A scene is a fully deterministic function of (seed, config).  Generation may
internally retry with derived sub-seeds until the occlusion requirement is
met, but the retry loop itself is deterministic, so equal inputs always give
bit-identical scenes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from ..geometry import CameraIntrinsics, Pose
from .textures import TextureParams, random_texture


@dataclass(frozen=True)
class RectPlane:
    """Finite textured rectangle: origin + a*u_axis + b*v_axis, |a| <= half_u."""

    origin: np.ndarray
    u_axis: np.ndarray  # unit, orthogonal to v_axis
    v_axis: np.ndarray
    half_u: float
    half_v: float
    texture: TextureParams

    @property
    def normal(self) -> np.ndarray:
        n = np.cross(self.u_axis, self.v_axis)
        return n / np.linalg.norm(n)


@dataclass(frozen=True)
class AxisBox:
    """Axis-aligned textured box."""

    center: np.ndarray
    half_extent: np.ndarray
    texture: TextureParams


@dataclass(frozen=True)
class SceneConfig:
    resolution: Tuple[int, int] = (64, 96)  # (H, W)
    n_planes: Tuple[int, int] = (1, 3)      # random small planes, excluding the back wall
    n_boxes: Tuple[int, int] = (1, 3)
    depth_range: Tuple[float, float] = (3.0, 9.0)
    trajectory_len: int = 31
    max_interval: int = 30
    occlusions: bool = True
    motion_scale: float = 1.0
    focal_scale: float = 1.1  # fx = fy = focal_scale * W


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    primitives: tuple
    trajectory: tuple  # camera-to-world poses
    intrinsics: CameraIntrinsics
    resolution: Tuple[int, int]
    background: TextureParams

    def __post_init__(self):
        if len(self.trajectory) < 31:
            raise ValueError("trajectory must contain at least 31 poses")


def _rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=np.float64)


def _rot_y(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=np.float64)


def _rot_z(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=np.float64)


def _frame_from_normal(n: np.ndarray):
    """Orthonormal (u, v) spanning the plane with normal n."""
    n = n / np.linalg.norm(n)
    helper = np.array([0.0, 1.0, 0.0]) if abs(n[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(helper, n)
    u = u / np.linalg.norm(u)
    v = np.cross(n, u)
    return u, v


def smooth_trajectory(rng: np.random.Generator, n: int, motion_scale: float) -> tuple:
    """Sinusoidal camera path: gentle translation plus small rotations."""
    t = np.arange(n, dtype=np.float64) / max(n - 1, 1)
    amp_t = rng.uniform([0.06, 0.06, 0.03], [0.18, 0.18, 0.10]) * motion_scale
    freq_t = rng.uniform(0.8, 2.0, size=3)
    phase_t = rng.uniform(0, 2 * np.pi, size=3)
    amp_r = np.deg2rad(rng.uniform([0.5, 0.5, 0.2], [2.0, 2.0, 1.0])) * motion_scale
    freq_r = rng.uniform(0.8, 2.0, size=3)
    phase_r = rng.uniform(0, 2 * np.pi, size=3)

    poses = []
    for k in range(n):
        pos = amp_t * np.sin(2 * np.pi * freq_t * t[k] + phase_t)
        ang = amp_r * np.sin(2 * np.pi * freq_r * t[k] + phase_r)
        R = _rot_z(ang[2]) @ _rot_y(ang[1]) @ _rot_x(ang[0])
        poses.append(Pose.from_rt(R, pos))
    return tuple(poses)


def _build_scene(rng: np.random.Generator, seed: int, config: SceneConfig) -> SceneSpec:
    h, w = config.resolution
    fx = config.focal_scale * w
    intr = CameraIntrinsics.from_params(fx, fx, (w - 1) / 2.0, (h - 1) / 2.0)

    z_near, z_far = config.depth_range
    half_w_at = lambda z: z * (w / 2.0) / fx  # frustum half-width
    half_h_at = lambda z: z * (h / 2.0) / fx

    prims = []

    # Back wall: slightly tilted plane past the far depth, large enough to
    # cover the frustum from every trajectory pose.
    wall_z = z_far
    tilt = np.deg2rad(rng.uniform(-8, 8, size=2))
    n_wall = _rot_y(tilt[0]) @ _rot_x(tilt[1]) @ np.array([0.0, 0.0, -1.0])
    u, v = _frame_from_normal(n_wall)
    prims.append(RectPlane(
        origin=np.array([0.0, 0.0, wall_z]),
        u_axis=u, v_axis=v,
        half_u=4.0 * half_w_at(wall_z),
        half_v=4.0 * half_h_at(wall_z),
        texture=random_texture(rng),
    ))

    n_planes = int(rng.integers(config.n_planes[0], config.n_planes[1] + 1))
    for _ in range(n_planes):
        z = rng.uniform(z_near + 0.3 * (z_far - z_near), z_far - 0.1 * (z_far - z_near))
        cx = rng.uniform(-0.6, 0.6) * half_w_at(z)
        cy = rng.uniform(-0.6, 0.6) * half_h_at(z)
        tilt_a = np.deg2rad(rng.uniform(0, 25))
        az = rng.uniform(0, 2 * np.pi)
        n_p = _rot_z(az) @ _rot_x(tilt_a) @ np.array([0.0, 0.0, -1.0])
        u, v = _frame_from_normal(n_p)
        prims.append(RectPlane(
            origin=np.array([cx, cy, z]),
            u_axis=u, v_axis=v,
            half_u=rng.uniform(0.25, 0.7) * half_w_at(z),
            half_v=rng.uniform(0.25, 0.7) * half_h_at(z),
            texture=random_texture(rng),
        ))

    n_boxes = int(rng.integers(config.n_boxes[0], config.n_boxes[1] + 1))
    for _ in range(n_boxes):
        z = rng.uniform(z_near, z_near + 0.5 * (z_far - z_near))
        cx = rng.uniform(-0.5, 0.5) * half_w_at(z)
        cy = rng.uniform(-0.5, 0.5) * half_h_at(z)
        ext = rng.uniform(0.12, 0.35, size=3) * half_w_at(z)
        prims.append(AxisBox(
            center=np.array([cx, cy, z]),
            half_extent=ext,
            texture=random_texture(rng),
        ))

    traj_len = max(config.trajectory_len, 31)
    trajectory = smooth_trajectory(rng, traj_len, config.motion_scale)

    return SceneSpec(
        seed=seed,
        primitives=tuple(prims),
        trajectory=trajectory,
        intrinsics=intr,
        resolution=(h, w),
        background=random_texture(rng),
    )


def generate_scene(seed: int, config: SceneConfig = SceneConfig()) -> SceneSpec:
    """Deterministic scene from (seed, config), honoring the occlusion request.

    When config.occlusions is true the generator probes a rendered pair and
    retries with derived sub-seeds until some reprojected pixel fails the
    visibility test; the loop is bounded and deterministic.
    """
    if seed < 0:
        raise ValueError("seed must be a non-negative integer")
    if config.trajectory_len < config.max_interval + 1:
        raise ValueError(
            f"trajectory length {config.trajectory_len} cannot support "
            f"max interval {config.max_interval}"
        )
    for attempt in range(32):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, attempt)))
        scene = _build_scene(rng, seed, config)
        if not config.occlusions or _occlusion_probe(scene, config):
            return scene
    raise RuntimeError("could not generate an occluding scene; loosen the config")


def _occlusion_probe(scene: SceneSpec, config: SceneConfig) -> bool:
    """True when pair (0, k) contains reprojected-but-invalid pixels."""
    from .pairs import pair_validity  # deferred: pairs renders scenes

    k = min(15, len(scene.trajectory) - 1)
    _, reachable, valid = pair_validity(scene, 0, k)
    occluded = reachable & ~valid
    return bool(occluded.any())
