"""Match-validity estimation on top of a frozen matcher.

Given a final flow field, the reference/target images, and their half-scale
encoder features, this module builds a stack of warp residuals, pushes it
through a small convolutional head, and scores each pixel with the
probability that its match is valid.  Training is plain binary cross-entropy
against the dataset's validity masks.  Confident pixels can then be thinned
into a sparse MatchSet for two-view geometry.
"""

from __future__ import annotations

import re

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .netcore.corr import bilinear_sample_nchw
from .netcore.model import seed_parameters

LOGIT_CLAMP = 15.0
HEAD_WIDTH = 32


def warp_nchw(field: torch.Tensor, flow: torch.Tensor):
    """Warp (B, C, H, W) by flow (B, 2, H, W): out(x) = field(x + flow(x)).

    Returns (warped, in_bounds) where in_bounds is (B, H, W) bool, true
    where the sample point lies inside [0, W-1] x [0, H-1].
    """
    b, _, h, w = field.shape
    gy, gx = torch.meshgrid(
        torch.arange(h, dtype=flow.dtype), torch.arange(w, dtype=flow.dtype), indexing="ij"
    )
    grid = torch.stack((gx, gy), dim=0)                     # (2, H, W)
    target = (grid.unsqueeze(0) + flow).permute(0, 2, 3, 1)  # (B, H, W, 2)
    pts = target.reshape(b, h * w, 2)
    vals = bilinear_sample_nchw(field, pts).reshape(b, field.shape[1], h, w)
    x, y = target[..., 0], target[..., 1]
    in_bounds = (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)
    return vals, in_bounds


def residuals(image_ref: torch.Tensor, image_tgt: torch.Tensor,
              feat_half_ref: torch.Tensor, feat_half_tgt: torch.Tensor,
              flow: torch.Tensor) -> torch.Tensor:
    """Per-pixel warp residual stack, (B, 3 + D + 1, H, W).

    Channels: |I_r - I_t(x + flow)| (3), the same absolute difference on the
    half-scale features after 2x bilinear upsampling (D), and a 0/1 flag
    marking pixels whose warp target falls outside the image.  Out-of-bounds
    pixels keep |I_r| (respectively |F_r|) as their residual so the stack
    stays non-negative and non-committal there; the flag channel lets the
    head treat the boundary case separately from photometric error.
    """
    if image_ref.dim() != 4 or image_ref.shape[1] != 3:
        raise ValueError("images must be (B, 3, H, W)")
    if image_ref.shape != image_tgt.shape:
        raise ValueError(f"image shapes differ: {tuple(image_ref.shape)} vs {tuple(image_tgt.shape)}")
    b, _, h, w = image_ref.shape
    if flow.shape != (b, 2, h, w):
        raise ValueError(f"flow must be (B, 2, H, W) at image resolution, got {tuple(flow.shape)}")
    if feat_half_ref.shape != feat_half_tgt.shape:
        raise ValueError("half-scale feature shapes differ")
    if feat_half_ref.shape[2] * 2 != h or feat_half_ref.shape[3] * 2 != w:
        raise ValueError(
            f"features expected at half resolution {(h // 2, w // 2)}, "
            f"got {tuple(feat_half_ref.shape[2:])}"
        )

    warped, inb = warp_nchw(image_tgt, flow)
    mask = inb.unsqueeze(1)
    rgb = torch.where(mask, (image_ref - warped).abs(), image_ref.abs())

    f_r = F.interpolate(feat_half_ref, scale_factor=2, mode="bilinear", align_corners=True)
    f_t = F.interpolate(feat_half_tgt, scale_factor=2, mode="bilinear", align_corners=True)
    warped_f, _ = warp_nchw(f_t, flow.to(f_t.dtype))
    feat = torch.where(mask, (f_r - warped_f).abs(), f_r.abs())

    flag = (~inb).to(image_ref.dtype).unsqueeze(1)
    return torch.cat([rgb, feat.to(image_ref.dtype), flag], dim=1)


class UncertaintyHead(nn.Module):
    """Three convolutions (3x3, 3x3, 1x1) -> clamped logit -> sigmoid."""

    def __init__(self, in_channels: int, width: int = HEAD_WIDTH):
        super().__init__()
        self.in_channels = in_channels
        self.conv1 = nn.Conv2d(in_channels, width, 3, padding=1)
        self.conv2 = nn.Conv2d(width, width, 3, padding=1)
        self.conv3 = nn.Conv2d(width, 1, 1)

    def logits(self, stack: torch.Tensor) -> torch.Tensor:
        if stack.dim() != 4 or stack.shape[1] != self.in_channels:
            raise ValueError(
                f"residual stack must be (B, {self.in_channels}, H, W), got {tuple(stack.shape)}"
            )
        x = F.relu(self.conv1(stack))
        x = F.relu(self.conv2(x))
        return self.conv3(x).clamp(-LOGIT_CLAMP, LOGIT_CLAMP)

    def forward(self, stack: torch.Tensor) -> torch.Tensor:
        # (B, 1, H, W) probabilities in the open interval (0, 1)
        return torch.sigmoid(self.logits(stack))


def build_head(in_channels: int, seed: int, width: int = HEAD_WIDTH) -> UncertaintyHead:
    """Head whose parameters are a pure function of (in_channels, width, seed)."""
    head = UncertaintyHead(in_channels, width)
    seed_parameters(head, seed)
    return head


def predict(stack: torch.Tensor, head: UncertaintyHead) -> torch.Tensor:
    """Probability-of-valid-match map, (B, H, W)."""
    return head(stack).squeeze(1)


def loss_uncertainty(p_hat: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy of predicted validity against the mask.

    Probabilities are clamped to the range reachable through the head's
    logit clamp, so the loss is finite for any input including exact 0/1.
    """
    if p_hat.shape != valid.shape:
        raise ValueError(f"shape mismatch: {tuple(p_hat.shape)} vs {tuple(valid.shape)}")
    p = valid.to(p_hat.dtype)
    eps = torch.sigmoid(torch.tensor(-LOGIT_CLAMP, dtype=p_hat.dtype))
    q = p_hat.clamp(eps, 1 - eps)
    return -(p * q.log() + (1 - p) * (1 - q).log()).mean()


def sparsify(flow, p_hat, threshold: float, n: int, seed: int = 0):
    """Confident pixels (p_hat >= threshold) thinned to <= n balanced matches.

    Returns an evalkit MatchSet; an empty set (is_empty) means "no confident
    matches" and is a legal outcome, not an error.
    """
    from .evalkit.matches import balanced_sample  # deferred: evalkit.report uses this module

    if isinstance(flow, torch.Tensor) and flow.dim() == 4:
        if flow.shape[0] != 1:
            raise ValueError("sparsify operates on a single image; got a batch")
        flow = flow[0]
    if isinstance(p_hat, torch.Tensor) and p_hat.dim() == 3:
        if p_hat.shape[0] != 1:
            raise ValueError("sparsify operates on a single image; got a batch")
        p_hat = p_hat[0]
    return balanced_sample(flow, p_hat, threshold, n, seed)


def write_uncertainty_pgm(path, p_map) -> None:
    """8-bit P5 probability raster for quick inspection (values scaled by 255)."""
    if isinstance(p_map, torch.Tensor):
        p_map = p_map.detach().cpu().numpy()
    arr = np.asarray(p_map, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"probability map must be (H, W), got {arr.shape}")
    levels = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii"))
        f.write(levels.tobytes())


def read_uncertainty_pgm(path) -> np.ndarray:
    """Inverse of write_uncertainty_pgm up to 8-bit quantization; (H, W) float32."""
    with open(path, "rb") as f:
        data = f.read()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+255\s", data)
    if not m:
        raise ValueError(f"{path}: not an 8-bit P5 raster")
    w, h = int(m.group(1)), int(m.group(2))
    levels = np.frombuffer(data[m.end():], dtype=np.uint8)
    if levels.size != h * w:
        raise ValueError(f"{path}: payload size mismatch")
    return levels.reshape(h, w).astype(np.float32) / np.float32(255.0)
