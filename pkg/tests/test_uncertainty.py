import numpy as np
import pytest
import torch

from recmatch.uncertainty import (
    UncertaintyHead,
    build_head,
    loss_uncertainty,
    predict,
    read_uncertainty_pgm,
    residuals,
    sparsify,
    warp_nchw,
    write_uncertainty_pgm,
)


def _pair(rng, b=1, d=4, h=8, w=12):
    ref = torch.from_numpy(rng.random((b, 3, h, w))).float()
    tgt = torch.from_numpy(rng.random((b, 3, h, w))).float()
    fr = torch.from_numpy(rng.random((b, d, h // 2, w // 2))).float()
    ft = torch.from_numpy(rng.random((b, d, h // 2, w // 2))).float()
    return ref, tgt, fr, ft


class TestWarp:
    def test_zero_flow_identity(self):
        rng = np.random.default_rng(0)
        field = torch.from_numpy(rng.random((2, 3, 5, 7)))
        out, inb = warp_nchw(field, torch.zeros(2, 2, 5, 7, dtype=field.dtype))
        assert torch.equal(out, field)
        assert inb.all()

    def test_integer_shift(self):
        rng = np.random.default_rng(1)
        field = torch.from_numpy(rng.random((1, 2, 4, 6)))
        flow = torch.zeros(1, 2, 4, 6, dtype=field.dtype)
        flow[:, 0] = 2.0  # sample from x+2
        out, inb = warp_nchw(field, flow)
        assert torch.equal(out[..., :4], field[..., 2:])
        assert inb[0, :, :4].all() and not inb[0, :, 4:].any()


class TestResiduals:
    def test_identical_pair_zero_flow(self):
        rng = np.random.default_rng(2)
        ref, _, fr, _ = _pair(rng)
        stack = residuals(ref, ref.clone(), fr, fr.clone(), torch.zeros(1, 2, 8, 12))
        assert stack.shape == (1, 3 + 4 + 1, 8, 12)
        assert stack.abs().max().item() == 0.0

    def test_shift_oracle(self):
        # ref(x) = tgt(x + 2), so flow (2, 0) lands every in-bounds RGB
        # residual exactly on matching samples
        rng = np.random.default_rng(3)
        h, w = 8, 12
        wide = torch.from_numpy(rng.random((1, 3, h, w + 2))).float()
        ref, tgt = wide[..., 2:], wide[..., :w]
        fwide = torch.from_numpy(rng.random((1, 4, h // 2, (w + 2) // 2))).float()
        fr, ft = fwide[..., 1:], fwide[..., : w // 2]
        flow = torch.zeros(1, 2, h, w)
        flow[:, 0] = 2.0
        stack = residuals(ref.contiguous(), tgt.contiguous(), fr.contiguous(),
                          ft.contiguous(), flow)
        assert stack[:, :3, :, : w - 2].abs().max().item() == 0.0
        assert stack[:, -1, :, : w - 2].max().item() == 0.0   # flag clear in-bounds
        assert (stack[:, -1, :, w - 2 :] == 1.0).all()        # flag set past the edge

    def test_out_of_bounds_convention(self):
        rng = np.random.default_rng(4)
        ref, tgt, fr, ft = _pair(rng)
        flow = torch.full((1, 2, 8, 12), 100.0)  # everything lands outside
        stack = residuals(ref, tgt, fr, ft, flow)
        assert torch.equal(stack[:, :3], ref.abs())
        assert (stack[:, -1] == 1.0).all()

    def test_nonnegative(self):
        rng = np.random.default_rng(5)
        ref, tgt, fr, ft = _pair(rng)
        flow = torch.from_numpy(rng.normal(scale=3.0, size=(1, 2, 8, 12))).float()
        stack = residuals(ref, tgt, fr, ft, flow)
        assert (stack >= 0).all()

    def test_resolution_mismatch(self):
        rng = np.random.default_rng(6)
        ref, tgt, fr, ft = _pair(rng)
        with pytest.raises(ValueError):
            residuals(ref, tgt, fr, ft, torch.zeros(1, 2, 8, 10))
        with pytest.raises(ValueError):
            residuals(ref, tgt, fr[..., :-1], ft[..., :-1], torch.zeros(1, 2, 8, 12))


class TestHead:
    def test_output_open_interval(self):
        head = build_head(8, seed=0)
        stack = torch.randn(2, 8, 8, 8) * 100.0
        p = head(stack)
        assert p.shape == (2, 1, 8, 8)
        assert (p > 0).all() and (p < 1).all()

    def test_logit_clamp(self):
        head = build_head(4, seed=1)
        with torch.no_grad():
            head.conv3.bias.fill_(1e6)
        lg = head.logits(torch.randn(1, 4, 6, 6))
        assert lg.max().item() <= 15.0

    def test_deterministic(self):
        head = build_head(6, seed=2)
        stack = torch.randn(1, 6, 8, 8)
        assert torch.equal(head(stack), head(stack))

    def test_build_reproducible(self):
        h1, h2 = build_head(5, seed=3), build_head(5, seed=3)
        for p1, p2 in zip(h1.parameters(), h2.parameters()):
            assert torch.equal(p1, p2)

    def test_channel_mismatch(self):
        head = UncertaintyHead(8)
        with pytest.raises(ValueError):
            head(torch.zeros(1, 7, 8, 8))

    def test_predict_squeezes(self):
        head = build_head(4, seed=4)
        p = predict(torch.randn(3, 4, 8, 8), head)
        assert p.shape == (3, 8, 8)


class TestLoss:
    def test_half_probability_is_ln2(self):
        p_hat = torch.full((1, 6, 6), 0.5, dtype=torch.float64)
        valid = torch.rand(1, 6, 6) > 0.5
        loss = loss_uncertainty(p_hat, valid)
        assert loss.item() == pytest.approx(np.log(2.0), rel=1e-12)

    def test_perfect_saturation_near_zero(self):
        valid = torch.rand(2, 5, 5) > 0.5
        p_hat = valid.double().clamp(1e-12, 1 - 1e-12)
        loss = loss_uncertainty(p_hat, valid)
        # clamped to the logit-15 range, so ~1.5e-6 instead of exactly 0
        assert loss.item() < 1e-5

    def test_label_flip_increases_loss(self):
        torch.manual_seed(0)
        p_hat = torch.rand(1, 4, 4, dtype=torch.float64) * 0.8 + 0.1
        valid = p_hat > 0.5  # roughly aligned labels
        base = loss_uncertainty(p_hat, valid).item()
        flipped = valid.clone()
        flipped[0, 0, 0] = ~flipped[0, 0, 0]
        assert loss_uncertainty(p_hat, flipped).item() > base

    def test_extreme_inputs_finite(self):
        p_hat = torch.tensor([[[0.0, 1.0]]], dtype=torch.float64)
        valid = torch.tensor([[[True, False]]])
        assert torch.isfinite(loss_uncertainty(p_hat, valid))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            loss_uncertainty(torch.zeros(1, 4, 4), torch.zeros(1, 4, 5, dtype=torch.bool))

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        logits = torch.from_numpy(rng.normal(scale=2.0, size=(1, 6, 6))).requires_grad_(True)
        valid = torch.from_numpy(rng.random((1, 6, 6)) > 0.4)

        def f(lg):
            return loss_uncertainty(torch.sigmoid(lg), valid)

        loss = f(logits)
        loss.backward()
        eps = 1e-6
        for _ in range(20):
            i = rng.integers(6), rng.integers(6)
            e = torch.zeros_like(logits)
            e[0, i[0], i[1]] = eps
            num = (f(logits + e) - f(logits - e)).item() / (2 * eps)
            ana = logits.grad[0, i[0], i[1]].item()
            assert num == pytest.approx(ana, rel=1e-4, abs=1e-9)


class TestSparsify:
    def _setup(self, h=16, w=16):
        flow = torch.zeros(2, h, w)
        flow[0] = 1.0
        return flow

    def test_full_confidence_keeps_everything_reachable(self):
        h = w = 16
        flow = torch.zeros(2, h, w)
        p = torch.full((h, w), 0.99)
        matches = sparsify(flow, p, threshold=0.5, n=h * w, seed=0)
        assert len(matches) == h * w

    def test_half_confident_map(self):
        h = w = 16
        flow = torch.zeros(2, h, w)
        p = torch.full((h, w), 0.2)
        p[:, : w // 2] = 0.9
        matches = sparsify(flow, p, threshold=0.5, n=h * w, seed=0)
        assert len(matches) == h * w // 2
        assert (matches.x_ref[:, 0] < w // 2).all()

    def test_no_oversampling(self):
        flow = torch.zeros(2, 8, 8)
        p = torch.zeros(8, 8)
        p[0, 0] = 0.9
        p[7, 7] = 0.9
        matches = sparsify(flow, p, threshold=0.5, n=100, seed=0)
        assert len(matches) == 2
        assert len(np.unique(matches.x_ref, axis=0)) == 2

    def test_empty_candidates_flagged_not_raised(self):
        flow = torch.zeros(2, 8, 8)
        p = torch.full((8, 8), 0.1)
        matches = sparsify(flow, p, threshold=0.5, n=16, seed=0)
        assert matches.is_empty

    def test_matches_carry_flow(self):
        h = w = 16
        flow = self._setup()
        p = torch.full((h, w), 0.9)
        matches = sparsify(flow, p, threshold=0.5, n=32, seed=1)
        assert np.allclose(matches.x_tgt[:, 0], matches.x_ref[:, 0] + 1.0)
        assert np.allclose(matches.x_tgt[:, 1], matches.x_ref[:, 1])

    def test_parameter_validation(self):
        flow = torch.zeros(2, 8, 8)
        p = torch.full((8, 8), 0.9)
        with pytest.raises(ValueError):
            sparsify(flow, p, threshold=0.0, n=16)
        with pytest.raises(ValueError):
            sparsify(flow, p, threshold=0.5, n=4)


class TestExport:
    def test_pgm_round_trip(self, tmp_path):
        rng = np.random.default_rng(8)
        p = rng.random((10, 14)).astype(np.float32)
        path = tmp_path / "unc.pgm"
        write_uncertainty_pgm(path, p)
        back = read_uncertainty_pgm(path)
        assert back.shape == p.shape
        assert np.abs(back - p).max() <= 0.5 / 255 + 1e-7

    def test_pgm_quantized_fixed_point(self, tmp_path):
        p = np.round(np.linspace(0, 1, 20).reshape(4, 5) * 255) / 255
        path = tmp_path / "q.pgm"
        write_uncertainty_pgm(path, p)
        assert np.allclose(read_uncertainty_pgm(path), p, atol=1e-7)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "bad.pgm"
        path.write_bytes(b"P6\n3 3\n255\n" + bytes(27))
        with pytest.raises(ValueError):
            read_uncertainty_pgm(path)
