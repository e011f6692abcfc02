"""Analytic vs central-finite-difference gradients, float64, 8x8 instances.

Every differentiable path gets randomized directional probes: correlation
construction, both lookup paths, warping residuals, and both losses.  The
probes avoid the known kinks (abs at zero, bilinear weights at integer
coordinates, clamp saturation), where a gradient check is meaningless.
"""

from collections import Counter

import torch

from oracles import gradient_probe_suite

TOLERANCE = 1e-4

torch.set_default_dtype(torch.float64)
RESULTS = gradient_probe_suite(per_family=30, seed=0)
torch.set_default_dtype(torch.float32)


def _family(name):
    errs = [e for fam, e in RESULTS if fam == name]
    assert errs, f"no probes ran for {name}"
    return errs


def test_total_probe_count():
    assert len(RESULTS) >= 200


def test_global_corr_gradients():
    assert max(_family("global_corr")) <= TOLERANCE


def test_lookup_pyramid_gradients():
    assert max(_family("lookup_pyramid")) <= TOLERANCE


def test_lookup_local_gradients():
    assert max(_family("lookup_local")) <= TOLERANCE


def test_warp_residual_gradients():
    assert max(_family("warp_residuals")) <= TOLERANCE


def test_loss_matching_gradients():
    assert max(_family("loss_matching_dense")) <= TOLERANCE
    assert max(_family("loss_matching_sparse")) <= TOLERANCE


def test_loss_uncertainty_gradients():
    assert max(_family("loss_uncertainty")) <= TOLERANCE


def test_every_family_probed():
    families = Counter(fam for fam, _ in RESULTS)
    assert set(families) == {
        "global_corr", "lookup_pyramid", "lookup_local", "warp_residuals",
        "loss_matching_dense", "loss_matching_sparse", "loss_uncertainty",
    }
    assert all(v == 30 for v in families.values())
