import math

import pytest
import torch

from recmatch.netcore import iterate_weights, loss_matching


def _entry(flow):
    return flow


class TestWeights:
    def test_geometric_schedule(self):
        w = iterate_weights(3, 0.8)
        assert w == pytest.approx([0.64, 0.8, 1.0])

    def test_last_weight_is_one(self):
        for n in (1, 5, 13):
            assert iterate_weights(n, 0.8)[-1] == pytest.approx(1.0)

    def test_single(self):
        assert iterate_weights(1, 0.8) == [1.0]


class TestDense:
    def test_exact_match_zero(self):
        gt = torch.randn(1, 2, 6, 6, dtype=torch.float64)
        valid = torch.ones(1, 6, 6, dtype=torch.bool)
        loss = loss_matching([gt.clone()], gt, valid, "dense")
        assert loss.item() == 0.0

    def test_unit_offset_hand_value(self):
        # one prediction, error (1, 1) everywhere, L1 channel sum = 2,
        # mean over pixels = 2, weight gamma^0 = 1
        gt = torch.zeros(1, 2, 4, 4)
        pred = torch.ones(1, 2, 4, 4)
        valid = torch.ones(1, 4, 4, dtype=torch.bool)
        loss = loss_matching([pred], gt, valid, "dense")
        assert loss.item() == pytest.approx(2.0)

    def test_dense_ignores_mask(self):
        gt = torch.zeros(1, 2, 4, 4)
        pred = torch.ones(1, 2, 4, 4)
        none_valid = torch.zeros(1, 4, 4, dtype=torch.bool)
        loss = loss_matching([pred], gt, none_valid, "dense")
        assert loss.item() == pytest.approx(2.0)

    def test_weighting_across_iterates(self):
        gt = torch.zeros(1, 2, 2, 2)
        one = torch.ones(1, 2, 2, 2)
        valid = torch.ones(1, 2, 2, dtype=torch.bool)
        # three identical unit-error iterates: (0.64 + 0.8 + 1.0) * 2
        loss = loss_matching([one, one, one], gt, valid, "dense", gamma=0.8)
        assert loss.item() == pytest.approx(2.0 * (0.64 + 0.8 + 1.0))


class TestSparse:
    def test_mask_absorbs_error(self):
        gt = torch.zeros(1, 2, 4, 4)
        pred = torch.zeros(1, 2, 4, 4)
        pred[0, :, 0, 0] = 100.0  # huge error on one pixel
        valid = torch.ones(1, 4, 4, dtype=torch.bool)
        valid[0, 0, 0] = False
        loss = loss_matching([pred], gt, valid, "sparse")
        assert loss.item() == 0.0

    def test_masked_mean_counts_only_valid(self):
        gt = torch.zeros(1, 2, 2, 2)
        pred = torch.zeros(1, 2, 2, 2)
        pred[0, 0, 0, 0] = 4.0
        valid = torch.zeros(1, 2, 2, dtype=torch.bool)
        valid[0, 0, 0] = True
        valid[0, 1, 1] = True
        # errors: 4 on one valid pixel, 0 on the other -> mean 2
        loss = loss_matching([pred], gt, valid, "sparse")
        assert loss.item() == pytest.approx(2.0)

    def test_empty_mask_warns_and_zero(self, caplog):
        gt = torch.zeros(1, 2, 2, 2)
        pred = torch.ones(1, 2, 2, 2, requires_grad=True)
        valid = torch.zeros(1, 2, 2, dtype=torch.bool)
        with caplog.at_level("WARNING"):
            loss = loss_matching([pred], gt, valid, "sparse")
        assert loss.item() == 0.0
        assert any("mask" in rec.message for rec in caplog.records)
        loss.backward()  # still differentiable
        assert torch.isfinite(pred.grad).all()

    def test_matches_dense_under_full_mask(self):
        torch.manual_seed(0)
        gt = torch.randn(2, 2, 5, 5)
        preds = [torch.randn(2, 2, 5, 5) for _ in range(3)]
        valid = torch.ones(2, 5, 5, dtype=torch.bool)
        d = loss_matching(preds, gt, valid, "dense")
        s = loss_matching(preds, gt, valid, "sparse")
        assert torch.allclose(d, s)


class TestValidation:
    def test_empty_predictions(self):
        gt = torch.zeros(1, 2, 2, 2)
        valid = torch.ones(1, 2, 2, dtype=torch.bool)
        with pytest.raises(ValueError):
            loss_matching([], gt, valid, "dense")

    def test_unknown_supervision(self):
        gt = torch.zeros(1, 2, 2, 2)
        valid = torch.ones(1, 2, 2, dtype=torch.bool)
        with pytest.raises(ValueError):
            loss_matching([gt], gt, valid, "semi")

    def test_explicit_weights_length(self):
        gt = torch.zeros(1, 2, 2, 2)
        valid = torch.ones(1, 2, 2, dtype=torch.bool)
        with pytest.raises(ValueError):
            loss_matching([gt, gt], gt, valid, "dense", weights=[1.0])

    def test_nonpositive_weight(self):
        gt = torch.zeros(1, 2, 2, 2)
        valid = torch.ones(1, 2, 2, dtype=torch.bool)
        with pytest.raises(ValueError):
            loss_matching([gt], gt, valid, "dense", weights=[0.0])

    def test_explicit_weights_used(self):
        gt = torch.zeros(1, 2, 2, 2)
        one = torch.ones(1, 2, 2, 2)
        valid = torch.ones(1, 2, 2, dtype=torch.bool)
        loss = loss_matching([one, one], gt, valid, "dense", weights=[0.25, 0.5])
        assert loss.item() == pytest.approx(2.0 * 0.75)
