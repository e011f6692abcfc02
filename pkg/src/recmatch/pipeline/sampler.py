"""Dataset mixing and batch assembly for the training loops."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

from ..synth import read_sample


def mix_sampler(manifests, weights, seed: int):
    """Infinite stream of (dataset_idx, sample_idx, supervision) draws.

    Datasets are chosen i.i.d. by normalized weight, samples uniformly within
    the chosen dataset.  Weights of zero are legal; a positive weight on an
    empty dataset is a configuration error.
    """
    manifests = list(manifests)
    weights = [float(w) for w in weights]
    if len(weights) != len(manifests):
        raise ValueError(f"{len(weights)} weights for {len(manifests)} manifests")
    if any(w < 0 for w in weights) or sum(weights) <= 0:
        raise ValueError("mixture weights must be non-negative and not all zero")
    for m, w in zip(manifests, weights):
        if w > 0 and len(m) == 0:
            raise ValueError(f"dataset {m.root} is empty but has positive weight {w}")
    p = np.asarray(weights, dtype=np.float64)
    p = p / p.sum()
    rng = np.random.default_rng(seed)

    def stream():
        while True:
            d = int(rng.choice(len(manifests), p=p))
            s = int(rng.integers(len(manifests[d])))
            yield d, s, manifests[d].supervision[s]

    return stream()


def _resize_sample(ref, tgt, flow, valid, resolution):
    """Bilinear image/flow resize with flow rescaling; nearest for the mask."""
    h, w = resolution
    _, _, h0, w0 = ref.shape
    if (h0, w0) == (h, w):
        return ref, tgt, flow, valid
    ref = F.interpolate(ref, size=(h, w), mode="bilinear", align_corners=False)
    tgt = F.interpolate(tgt, size=(h, w), mode="bilinear", align_corners=False)
    flow = F.interpolate(flow, size=(h, w), mode="bilinear", align_corners=False)
    flow = torch.stack([flow[:, 0] * (w / w0), flow[:, 1] * (h / h0)], dim=1)
    valid = F.interpolate(valid.unsqueeze(1).float(), size=(h, w), mode="nearest")
    return ref, tgt, flow, valid.squeeze(1) > 0.5


def load_batch(manifests, draws, resolution=None) -> dict:
    """Read and stack the drawn samples into training tensors.

    Returns ref/tgt (B, 3, H, W) float32, flow (B, 2, H, W) float32,
    valid (B, H, W) bool, modes (per-sample supervision tuple).
    """
    refs, tgts, flows, valids, modes = [], [], [], [], []
    for d_idx, s_idx, _ in draws:
        sp = read_sample(manifests[d_idx].sample_path(s_idx))
        refs.append(torch.from_numpy(sp.ref.image.copy()).permute(2, 0, 1))
        tgts.append(torch.from_numpy(sp.tgt.image.copy()).permute(2, 0, 1))
        flows.append(torch.from_numpy(sp.flow_gt.copy()).permute(2, 0, 1))
        valids.append(torch.from_numpy(sp.valid.copy()))
        modes.append(sp.supervision)
    batch = {
        "ref": torch.stack(refs),
        "tgt": torch.stack(tgts),
        "flow": torch.stack(flows),
        "valid": torch.stack(valids),
        "modes": tuple(modes),
    }
    if resolution is not None:
        batch["ref"], batch["tgt"], batch["flow"], batch["valid"] = _resize_sample(
            batch["ref"], batch["tgt"], batch["flow"], batch["valid"], resolution
        )
    return batch
