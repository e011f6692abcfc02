"""Two-view relative pose from sparse correspondences.

Essential-matrix estimation with a normalized eight-point solver inside a
seeded robust consensus loop, Sampson-distance inlier scoring in normalized
camera coordinates, cheirality-disambiguated decomposition, and a final
re-solve on the consensus set.  Degenerate inputs (too few matches, pure
rotation, rank-deficient solves) come back as a failed PoseEstimate with a
reason code, never an exception.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geometry import CameraIntrinsics

SAMPSON_THRESHOLD = 1e-3      # inlier cutoff, normalized-coordinate units
RANSAC_ITERATIONS = 2000
RANSAC_CONFIDENCE = 0.999
PARALLAX_FLOOR = 1e-6         # radians; below this the pair is rotation-only


@dataclass(frozen=True)
class PoseEstimate:
    """Relative pose ref -> tgt: X_tgt = R @ X_ref + t, with |t| = 1."""

    R: np.ndarray
    t: np.ndarray
    inliers: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    success: bool = False
    reason: str = ""

    def __post_init__(self):
        object.__setattr__(self, "R", np.asarray(self.R, dtype=np.float64))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.float64))
        object.__setattr__(self, "inliers", np.asarray(self.inliers, dtype=np.int64))
        if self.success:
            R, t = self.R, self.t
            if R.shape != (3, 3) or np.abs(R @ R.T - np.eye(3)).max() > 1e-9:
                raise ValueError("R must be orthonormal")
            if abs(np.linalg.det(R) - 1.0) > 1e-9:
                raise ValueError("R must be a proper rotation")
            if t.shape != (3,) or abs(np.linalg.norm(t) - 1.0) > 1e-12:
                raise ValueError("t must be a unit vector")


def _failed(reason: str) -> PoseEstimate:
    return PoseEstimate(np.eye(3), np.array([0.0, 0.0, 1.0]), success=False, reason=reason)


def _intrinsic_matrix(k) -> np.ndarray:
    if isinstance(k, CameraIntrinsics):
        return k.K
    k = np.asarray(k, dtype=np.float64)
    if k.shape != (3, 3):
        raise ValueError(f"intrinsics must be 3x3, got {k.shape}")
    return k


def _normalized_points(pixels: np.ndarray, K: np.ndarray) -> np.ndarray:
    """Pixel coordinates -> normalized camera coordinates (N, 2)."""
    ones = np.ones((len(pixels), 1))
    hom = np.concatenate([pixels, ones], axis=1)
    out = (np.linalg.inv(K) @ hom.T).T
    return out[:, :2] / out[:, 2:3]


def _hartley_normalize(pts: np.ndarray):
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    scale = np.sqrt(2.0) / max(np.sqrt((centered ** 2).sum(axis=1)).mean(), 1e-12)
    T = np.array([
        [scale, 0.0, -scale * centroid[0]],
        [0.0, scale, -scale * centroid[1]],
        [0.0, 0.0, 1.0],
    ])
    return centered * scale, T


def _eight_point(p_ref: np.ndarray, p_tgt: np.ndarray):
    """Linear essential-matrix solve; None when the system is rank-deficient."""
    q_r, T_r = _hartley_normalize(p_ref)
    q_t, T_t = _hartley_normalize(p_tgt)
    xr, yr = q_r[:, 0], q_r[:, 1]
    xt, yt = q_t[:, 0], q_t[:, 1]
    ones = np.ones_like(xr)
    A = np.stack([xt * xr, xt * yr, xt, yt * xr, yt * yr, yt, xr, yr, ones], axis=1)
    _, s, Vt = np.linalg.svd(A)
    # a second vanishing singular value means the nullspace is not unique
    # (coplanar points or a rotation-only pair): no single solution exists
    second_smallest = s[-2] if len(s) >= 2 else s[-1]
    if second_smallest < 1e-12 * max(s[0], 1e-300):
        return None
    E = Vt[-1].reshape(3, 3)
    E = T_t.T @ E @ T_r
    # project onto the essential manifold: singular values (1, 1, 0)
    U, _, Vt = np.linalg.svd(E)
    return U @ np.diag([1.0, 1.0, 0.0]) @ Vt


def sampson_distance(E: np.ndarray, p_ref: np.ndarray, p_tgt: np.ndarray) -> np.ndarray:
    """First-order geometric distance to the epipolar constraint, (N,)."""
    ones = np.ones((len(p_ref), 1))
    x_r = np.concatenate([p_ref, ones], axis=1).T   # (3, N)
    x_t = np.concatenate([p_tgt, ones], axis=1).T
    Ex = E @ x_r
    Etx = E.T @ x_t
    num = (x_t * Ex).sum(axis=0)
    denom = Ex[0] ** 2 + Ex[1] ** 2 + Etx[0] ** 2 + Etx[1] ** 2
    return np.abs(num) / np.sqrt(np.maximum(denom, 1e-300))


def _fit_rotation(rays_ref: np.ndarray, rays_tgt: np.ndarray) -> np.ndarray:
    """Least-squares rotation taking ref rays onto target rays (Kabsch)."""
    H = rays_ref.T @ rays_tgt
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    return Vt.T @ np.diag([1.0, 1.0, d]) @ U.T


def _rays(pts: np.ndarray) -> np.ndarray:
    hom = np.concatenate([pts, np.ones((len(pts), 1))], axis=1)
    return hom / np.linalg.norm(hom, axis=1, keepdims=True)


def _triangulate(R: np.ndarray, t: np.ndarray, p_ref: np.ndarray, p_tgt: np.ndarray):
    """DLT triangulation in the reference frame for P_ref=[I|0], P_tgt=[R|t]."""
    P1 = np.concatenate([np.eye(3), np.zeros((3, 1))], axis=1)
    P2 = np.concatenate([R, t.reshape(3, 1)], axis=1)
    points = np.zeros((len(p_ref), 3))
    for i, ((xr, yr), (xt, yt)) in enumerate(zip(p_ref, p_tgt)):
        A = np.stack([
            xr * P1[2] - P1[0],
            yr * P1[2] - P1[1],
            xt * P2[2] - P2[0],
            yt * P2[2] - P2[1],
        ])
        _, _, Vt = np.linalg.svd(A)
        X = Vt[-1]
        points[i] = X[:3] / X[3] if abs(X[3]) > 1e-300 else np.full(3, np.inf)
    return points


def _cheirality_count(R, t, p_ref, p_tgt) -> int:
    X = _triangulate(R, t, p_ref, p_tgt)
    z_ref = X[:, 2]
    z_tgt = (X @ R.T + t)[:, 2]
    return int(((z_ref > 0) & (z_tgt > 0) & np.isfinite(z_ref)).sum())


def estimate_pose(matches, K_ref, K_tgt, iterations: int = RANSAC_ITERATIONS,
                  threshold: float = SAMPSON_THRESHOLD, seed: int = 0) -> PoseEstimate:
    """Robust essential-matrix pose from a MatchSet (or compatible object)."""
    if len(matches) < 8:
        return _failed("too-few-matches")
    K_r = _intrinsic_matrix(K_ref)
    K_t = _intrinsic_matrix(K_tgt)
    p_ref = _normalized_points(np.asarray(matches.x_ref, dtype=np.float64), K_r)
    p_tgt = _normalized_points(np.asarray(matches.x_tgt, dtype=np.float64), K_t)
    n = len(p_ref)

    # rotation-only pairs leave the translation direction unconstrained:
    # if a single rotation aligns (nearly) all rays, refuse to guess
    rot = _fit_rotation(_rays(p_ref), _rays(p_tgt))
    residual = np.arccos(np.clip(((_rays(p_ref) @ rot.T) * _rays(p_tgt)).sum(axis=1), -1.0, 1.0))
    if np.median(residual) < PARALLAX_FLOOR:
        return _failed("pure-rotation")

    # Consensus by clipped-cost (MSAC) rather than raw count: with a loose
    # fixed threshold, a minimal sample containing an outlier can interpolate
    # it and still keep every true inlier under the cutoff, beating the clean
    # model on count alone.  The clipped cost charges that model for the
    # residuals it smears across the inlier bulk, so the clean one wins.
    rng = np.random.default_rng(seed)
    best_inliers = None
    best_cost = np.inf
    for it in range(iterations):
        idx = rng.choice(n, size=8, replace=False)
        E = _eight_point(p_ref[idx], p_tgt[idx])
        if E is None:
            continue
        dist = sampson_distance(E, p_ref, p_tgt)
        cost = float(np.minimum(dist, threshold).sum())
        inl = dist < threshold
        count = int(inl.sum())
        if count >= 8 and cost < best_cost:
            best_cost = cost
            best_inliers = inl
            ratio = count / n
            if ratio >= 1.0:
                break
            needed = np.log(1.0 - RANSAC_CONFIDENCE) / np.log(1.0 - min(ratio ** 8, 1 - 1e-12))
            if it + 1 >= needed:
                break
    if best_inliers is None:
        return _failed("no-consensus")

    # Re-solve on the consensus set, re-scoring with a gate tightened to the
    # support set's own residual scale (10x the median support distance, never
    # looser than the caller's threshold).  Iterate until the set stops
    # changing; each round is one small-matrix solve.
    for _ in range(10):
        E = _eight_point(p_ref[best_inliers], p_tgt[best_inliers])
        if E is None:
            return _failed("degenerate-solve")
        dist = sampson_distance(E, p_ref, p_tgt)
        gate = min(threshold, max(10.0 * float(np.median(dist[best_inliers])), 1e-18))
        refined = dist < gate
        if refined.sum() < 8 or np.array_equal(refined, best_inliers):
            break
        best_inliers = refined

    inlier_idx = np.nonzero(best_inliers)[0]
    U, _, Vt = np.linalg.svd(E)
    if np.linalg.det(U) < 0:
        U = -U
    if np.linalg.det(Vt) < 0:
        Vt = -Vt
    W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    t_dir = U[:, 2] / np.linalg.norm(U[:, 2])
    candidates = [
        (U @ W @ Vt, t_dir),
        (U @ W @ Vt, -t_dir),
        (U @ W.T @ Vt, t_dir),
        (U @ W.T @ Vt, -t_dir),
    ]
    pr, pt = p_ref[inlier_idx], p_tgt[inlier_idx]
    counts = [_cheirality_count(R, t, pr, pt) for R, t in candidates]
    best = int(np.argmax(counts))
    if counts[best] == 0:
        return _failed("cheirality")
    R, t = candidates[best]
    return PoseEstimate(R, t / np.linalg.norm(t), inlier_idx, success=True)


def rotation_angle_deg(R: np.ndarray) -> float:
    """Geodesic angle of a rotation matrix, degrees."""
    c = (np.trace(R) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def pose_error(est: PoseEstimate, R_gt, t_gt) -> float:
    """max(rotation angle, translation-direction angle) in degrees; 180 on failure."""
    if not est.success:
        return 180.0
    R_gt = np.asarray(R_gt, dtype=np.float64)
    t_gt = np.asarray(t_gt, dtype=np.float64).reshape(3)
    norm = np.linalg.norm(t_gt)
    if norm == 0.0:
        return 180.0  # direction undefined; a "successful" estimate is wrong by fiat
    r_err = rotation_angle_deg(R_gt.T @ est.R)
    cos_t = np.clip(np.dot(est.t, t_gt / norm), -1.0, 1.0)
    t_err = float(np.degrees(np.arccos(cos_t)))
    return max(r_err, t_err)


def relative_pose(pose_ref, pose_tgt):
    """Ground-truth (R, t) mapping ref-camera points into the target frame."""
    R_r, t_r = pose_ref.R, pose_ref.t
    R_t, t_t = pose_tgt.R, pose_tgt.t
    R = R_t.T @ R_r
    t = R_t.T @ (t_r - t_t)
    return R, t
