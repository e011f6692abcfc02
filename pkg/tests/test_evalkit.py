import numpy as np
import pytest
import torch

from recmatch.evalkit import (
    MatchSet,
    PoseEstimate,
    aepe,
    auc,
    balanced_sample,
    estimate_pose,
    f1_outliers,
    pck,
    pose_error,
    relative_pose,
    rotation_angle_deg,
    sampson_distance,
)
from recmatch.evalkit.pose import _normalized_points
from recmatch.geometry import CameraIntrinsics

from oracles import rot_axis_angle


def _full(h, w, value):
    f = np.zeros((h, w, 2))
    f[..., 0] = value[0]
    f[..., 1] = value[1]
    return f


def _mask(h, w, on=True):
    return np.full((h, w), on, dtype=bool)


class TestAepe:
    def test_exact_match(self):
        gt = np.random.default_rng(0).normal(size=(6, 8, 2))
        assert aepe(gt, gt, _mask(6, 8)) == 0.0

    def test_three_four_five(self):
        gt = _full(4, 4, (0, 0))
        pred = _full(4, 4, (3, 4))
        assert aepe(pred, gt, _mask(4, 4)) == pytest.approx(5.0)

    def test_hand_mean(self):
        gt = np.zeros((2, 4, 2))
        pred = np.zeros((2, 4, 2))
        pred[0, :, 0] = 2.0
        pred[1, :, 0] = 4.0
        assert aepe(pred, gt, _mask(2, 4)) == pytest.approx(3.0)

    def test_empty_mask_undefined(self):
        gt = np.zeros((3, 3, 2))
        assert aepe(gt, gt, _mask(3, 3, False)) is None

    def test_accepts_torch(self):
        gt = torch.zeros(3, 3, 2)
        pred = torch.full((3, 3, 2), 1.0)
        got = aepe(pred, gt, torch.ones(3, 3, dtype=torch.bool))
        assert got == pytest.approx(np.sqrt(2.0))


class TestPck:
    def test_exact_match_is_100(self):
        gt = np.random.default_rng(1).normal(size=(5, 5, 2))
        for t in (0.5, 1.0, 5.0):
            assert pck(gt, gt, _mask(5, 5), t) == 100.0

    def test_boundary_is_strict(self):
        gt = _full(4, 4, (0, 0))
        pred = _full(4, 4, (1, 0))  # EPE exactly 1.0
        assert pck(pred, gt, _mask(4, 4), 1.0) == 0.0

    def test_half_pixel(self):
        gt = _full(4, 4, (0, 0))
        pred = _full(4, 4, (0.5, 0))
        assert pck(pred, gt, _mask(4, 4), 1.0) == 100.0

    def test_bad_threshold(self):
        gt = _full(2, 2, (0, 0))
        with pytest.raises(ValueError):
            pck(gt, gt, _mask(2, 2), 0.0)


class TestF1:
    def test_exact_match(self):
        gt = _full(4, 4, (7, -2))
        assert f1_outliers(gt, gt, _mask(4, 4)) == 0.0

    def test_large_motion_absorbs_error(self):
        gt = _full(4, 4, (200, 0))
        pred = _full(4, 4, (204, 0))  # EPE 4 < 5% of 200
        assert f1_outliers(pred, gt, _mask(4, 4)) == 0.0

    def test_small_motion_flags_error(self):
        gt = _full(4, 4, (10, 0))
        pred = _full(4, 4, (14, 0))  # EPE 4 > 3 and > 0.5
        assert f1_outliers(pred, gt, _mask(4, 4)) == 100.0

    def test_needs_both_conditions(self):
        gt = _full(4, 4, (1, 0))
        pred = _full(4, 4, (3.5, 0))  # EPE 2.5 < 3 px
        assert f1_outliers(pred, gt, _mask(4, 4)) == 0.0


class TestPermutationInvariance:
    def test_joint_shuffle_preserves_metrics(self):
        rng = np.random.default_rng(2)
        gt = rng.normal(size=(6, 7, 2))
        pred = gt + rng.normal(scale=2.0, size=(6, 7, 2))
        mask = rng.random((6, 7)) > 0.3
        flat_gt = gt.reshape(-1, 2)
        flat_pred = pred.reshape(-1, 2)
        flat_mask = mask.reshape(-1)
        perm = rng.permutation(len(flat_gt))
        for fn in (aepe, f1_outliers):
            assert fn(flat_pred[perm], flat_gt[perm], flat_mask[perm]) == pytest.approx(
                fn(pred, gt, mask)
            )
        assert pck(flat_pred[perm], flat_gt[perm], flat_mask[perm], 2.0) == pytest.approx(
            pck(pred, gt, mask, 2.0)
        )


class TestAuc:
    def test_all_zero_errors(self):
        assert auc([0.0] * 10) == [1.0, 1.0, 1.0]

    def test_all_beyond_twenty(self):
        assert auc([25.0, 180.0, 90.0]) == [0.0, 0.0, 0.0]

    def test_single_five_degree_error(self):
        got = auc([5.0], thresholds=(10.0,))
        assert got == [pytest.approx(0.5)]

    def test_default_thresholds_on_five(self):
        a5, a10, a20 = auc([5.0])
        assert a5 == pytest.approx(0.0)
        assert a10 == pytest.approx(0.5)
        assert a20 == pytest.approx(0.75)

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(3)
        errs = rng.uniform(0, 40, size=50)
        a = auc(errs, thresholds=(5, 10, 20, 40))
        assert a == sorted(a)

    def test_order_invariant(self):
        errs = [3.0, 12.0, 0.5, 19.0]
        assert auc(errs) == auc(list(reversed(errs)))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            auc([])


class TestBalancedSample:
    def test_uniform_map_balances_cells(self):
        h = w = 32  # 8x8 grid of 4x4-px cells
        flow = np.zeros((2, h, w))
        conf = np.full((h, w), 0.9)
        ms = balanced_sample(flow, conf, threshold=0.5, n=100, seed=0)
        assert len(ms) == 100
        cells = (ms.x_ref[:, 1] // 4).astype(int) * 8 + (ms.x_ref[:, 0] // 4).astype(int)
        counts = np.bincount(cells, minlength=64)
        assert counts.max() - counts.min() <= 1

    def test_concentrated_support(self):
        flow = np.zeros((2, 32, 32))
        conf = np.zeros((32, 32))
        conf[0:4, 0:4] = 0.99  # a single cell
        ms = balanced_sample(flow, conf, threshold=0.5, n=10, seed=0)
        assert len(ms) == 10
        assert (ms.x_ref < 4).all()

    def test_deterministic(self):
        rng = np.random.default_rng(4)
        flow = rng.normal(size=(2, 16, 16))
        conf = rng.random((16, 16))
        a = balanced_sample(flow, conf, 0.5, 20, seed=9)
        b = balanced_sample(flow, conf, 0.5, 20, seed=9)
        assert np.array_equal(a.x_ref, b.x_ref)
        assert np.array_equal(a.x_tgt, b.x_tgt)

    def test_out_of_bounds_targets_dropped(self):
        flow = np.full((2, 16, 16), 100.0)
        conf = np.full((16, 16), 0.9)
        ms = balanced_sample(flow, conf, 0.5, 16, seed=0)
        assert ms.is_empty

    def test_validation(self):
        flow = np.zeros((2, 8, 8))
        conf = np.full((8, 8), 0.9)
        with pytest.raises(ValueError):
            balanced_sample(flow, conf, 0.5, 7, seed=0)
        with pytest.raises(ValueError):
            balanced_sample(flow, conf, 1.0, 8, seed=0)


class TestMatchSet:
    def test_duplicate_refs_rejected(self):
        x = np.array([[1.0, 2.0], [1.0, 2.0]])
        with pytest.raises(ValueError):
            MatchSet(x, x, np.array([0.5, 0.5]))

    def test_confidence_range(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]])
        with pytest.raises(ValueError):
            MatchSet(x, x, np.array([0.5, 0.0]))


# ---------------------------------------------------------------------------
# two-view pose oracle: random 3D points, a known relative pose, projections
# ---------------------------------------------------------------------------

def _camera(h=480, w=640, f=500.0):
    return CameraIntrinsics.from_params(f, f, w / 2, h / 2)


def _two_view(rng, n=200, rot_deg=12.0, t_norm=0.5):
    axis = rng.normal(size=3)
    R = rot_axis_angle(axis / np.linalg.norm(axis), np.radians(rot_deg))
    t = rng.normal(size=3)
    t = t / np.linalg.norm(t) * t_norm
    X = np.stack([
        rng.uniform(-2.5, 2.5, n),
        rng.uniform(-2.0, 2.0, n),
        rng.uniform(4.0, 10.0, n),
    ], axis=1)
    K = _camera().K
    X_t = X @ R.T + t

    def project(P):
        p = (K @ P.T).T
        return p[:, :2] / p[:, 2:3]

    return project(X), project(X_t), R, t


def _match_set(pix_r, pix_t):
    return MatchSet(pix_r, pix_t, np.full(len(pix_r), 1.0))


class TestEstimatePose:
    def test_noiseless_recovery(self):
        rng = np.random.default_rng(5)
        pix_r, pix_t, R, t = _two_view(rng)
        est = estimate_pose(_match_set(pix_r, pix_t), _camera(), _camera())
        assert est.success, est.reason
        assert rotation_angle_deg(R.T @ est.R) < 0.1
        t_angle = np.degrees(np.arccos(np.clip(np.dot(est.t, t / np.linalg.norm(t)), -1, 1)))
        assert t_angle < 0.5
        assert len(est.inliers) == len(pix_r)

    def test_outlier_robustness(self):
        rng = np.random.default_rng(6)
        pix_r, pix_t, R, t = _two_view(rng)
        n = len(pix_r)
        bad = rng.choice(n, size=int(0.3 * n), replace=False)
        pix_t = pix_t.copy()
        pix_t[bad] = rng.uniform(0, 640, size=(len(bad), 2))
        est = estimate_pose(_match_set(pix_r, pix_t), _camera(), _camera(), seed=1)
        assert est.success, est.reason
        assert pose_error(est, R, t) < 0.5
        assert not np.isin(est.inliers, bad).any() or np.isin(est.inliers, bad).mean() < 0.05

    def test_pure_rotation_flagged(self):
        rng = np.random.default_rng(7)
        pix_r, pix_t, R, _ = _two_view(rng, t_norm=0.0)
        est = estimate_pose(_match_set(pix_r, pix_t), _camera(), _camera())
        assert not est.success
        assert est.reason == "pure-rotation"

    def test_too_few_matches(self):
        rng = np.random.default_rng(8)
        pix_r, pix_t, _, _ = _two_view(rng, n=7)
        est = estimate_pose(_match_set(pix_r, pix_t), _camera(), _camera())
        assert not est.success
        assert est.reason == "too-few-matches"

    def test_scale_invariance(self):
        rng = np.random.default_rng(9)
        pix_r, pix_t, R, t = _two_view(rng)
        K = _camera().K
        est1 = estimate_pose(_match_set(pix_r, pix_t), K, K, seed=3)
        s = 3.0
        Ks = K.copy()
        Ks[0] *= s
        Ks[1] *= s
        est2 = estimate_pose(_match_set(pix_r * s, pix_t * s), Ks, Ks, seed=3)
        assert est1.success and est2.success
        assert np.abs(est1.R - est2.R).max() < 1e-6
        assert np.abs(est1.t - est2.t).max() < 1e-6

    def test_sampson_of_truth_vanishes(self):
        rng = np.random.default_rng(10)
        pix_r, pix_t, R, t = _two_view(rng)
        tx = np.array([
            [0.0, -t[2], t[1]],
            [t[2], 0.0, -t[0]],
            [-t[1], t[0], 0.0],
        ])
        E = tx @ R
        K = _camera().K
        d = sampson_distance(E, _normalized_points(pix_r, K), _normalized_points(pix_t, K))
        assert d.max() < 1e-10


class TestPoseError:
    def _estimate(self, R, t):
        return PoseEstimate(R, t / np.linalg.norm(t), np.arange(8), success=True)

    def test_exact(self):
        rng = np.random.default_rng(11)
        axis = rng.normal(size=3)
        R = rot_axis_angle(axis / np.linalg.norm(axis), 0.3)
        t = np.array([0.6, 0.0, 0.8])
        assert pose_error(self._estimate(R, t), R, t) == pytest.approx(0.0, abs=1e-6)

    def test_ten_degree_rotation_offset(self):
        axis = np.array([0.0, 1.0, 0.0])
        R_gt = np.eye(3)
        R_est = rot_axis_angle(axis, np.radians(10.0))
        t = np.array([1.0, 0.0, 0.0])
        err = pose_error(self._estimate(R_est, t), R_gt, t)
        assert err == pytest.approx(10.0, abs=1e-9)

    def test_sign_flip_is_180(self):
        t = np.array([0.0, 0.0, 1.0])
        err = pose_error(self._estimate(np.eye(3), -t), np.eye(3), t)
        assert err == pytest.approx(180.0)

    def test_failure_is_180(self):
        failed = PoseEstimate(np.eye(3), np.array([0.0, 0.0, 1.0]), success=False, reason="x")
        assert pose_error(failed, np.eye(3), np.array([1.0, 0.0, 0.0])) == 180.0

    def test_estimate_validation(self):
        with pytest.raises(ValueError):
            PoseEstimate(np.eye(3) * 2.0, np.array([0.0, 0.0, 1.0]), success=True)
        with pytest.raises(ValueError):
            PoseEstimate(np.eye(3), np.array([0.0, 0.0, 2.0]), success=True)


class TestRelativePose:
    def test_round_trip_through_world_poses(self):
        from recmatch.geometry import Pose

        rng = np.random.default_rng(12)
        axis = rng.normal(size=3)
        R_r = rot_axis_angle(axis / np.linalg.norm(axis), 0.2)
        R_t = rot_axis_angle(axis / np.linalg.norm(axis), -0.35)
        p_r = Pose.from_rt(R_r, np.array([1.0, 2.0, 3.0]))
        p_t = Pose.from_rt(R_t, np.array([1.5, 1.0, 2.0]))
        R, t = relative_pose(p_r, p_t)
        # a world point expressed in both camera frames must agree
        X_w = rng.normal(size=3) + np.array([0, 0, 8.0])
        X_r = R_r.T @ (X_w - p_r.t)
        X_t = R_t.T @ (X_w - p_t.t)
        assert np.abs(R @ X_r + t - X_t).max() < 1e-12

    def test_identity_pair(self):
        from recmatch.geometry import Pose

        R, t = relative_pose(Pose.identity(), Pose.identity())
        assert np.abs(R - np.eye(3)).max() == 0.0
        assert np.abs(t).max() == 0.0
