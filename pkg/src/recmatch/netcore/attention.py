"""Windowed single-head attention for pairwise feature enhancement.

One shared-weight block applies self-attention to each image and then
cross-attention between them, so swapping the two inputs swaps the two
outputs exactly.  Maps whose sides are not multiples of the window size are
zero-padded for partitioning; padded positions are masked out of the
softmax and cropped from the result.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


def _partition(x: torch.Tensor, win: int):
    """(B, C, H, W) -> (B*nW, T, C) window tokens plus padded sizes."""
    b, c, h, w = x.shape
    ph = (win - h % win) % win
    pw = (win - w % win) % win
    if ph or pw:
        x = F.pad(x, (0, pw, 0, ph))
    hp, wp = h + ph, w + pw
    x = x.reshape(b, c, hp // win, win, wp // win, win)
    x = x.permute(0, 2, 4, 3, 5, 1).reshape(-1, win * win, c)
    return x, hp, wp


def _merge(tokens: torch.Tensor, b: int, c: int, hp: int, wp: int, win: int,
           h: int, w: int) -> torch.Tensor:
    x = tokens.reshape(b, hp // win, wp // win, win, win, c)
    x = x.permute(0, 5, 1, 3, 2, 4).reshape(b, c, hp, wp)
    return x[:, :, :h, :w]


def _key_mask(b: int, h: int, w: int, win: int, dtype, device) -> torch.Tensor:
    """(B*nW, 1, T) additive mask: -inf at padded key positions."""
    ones = torch.ones(b, 1, h, w, dtype=dtype, device=device)
    tok, _, _ = _partition(ones, win)  # padded keys become 0
    mask = torch.where(tok[..., 0] > 0, torch.zeros((), dtype=dtype),
                       torch.full((), float("-inf"), dtype=dtype))
    return mask.unsqueeze(1)


def windowed_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, win: int):
    """Scaled dot-product attention inside non-overlapping win x win windows.

    q, k, v: (B, C, H, W).  Returns (out (B, C, H, W), attn (B*nW, T, T));
    each attention row over the valid keys sums to 1.
    """
    b, c, h, w = q.shape
    qt, hp, wp = _partition(q, win)
    kt, _, _ = _partition(k, win)
    vt, _, _ = _partition(v, win)
    logits = qt @ kt.transpose(1, 2) / (c ** 0.5)
    logits = logits + _key_mask(b, h, w, win, q.dtype, q.device)
    attn = torch.softmax(logits, dim=-1)
    out = _merge(attn @ vt, b, c, hp, wp, win, h, w)
    return out, attn


class SelfCrossAttention(nn.Module):
    """Shared-weight self + cross enhancement of a feature-map pair."""

    def __init__(self, dim: int, window: int):
        super().__init__()
        self.window = window
        self.self_q = nn.Conv2d(dim, dim, 1)
        self.self_k = nn.Conv2d(dim, dim, 1)
        self.self_v = nn.Conv2d(dim, dim, 1)
        self.self_proj = nn.Conv2d(dim, dim, 1)
        self.cross_q = nn.Conv2d(dim, dim, 1)
        self.cross_k = nn.Conv2d(dim, dim, 1)
        self.cross_v = nn.Conv2d(dim, dim, 1)
        self.cross_proj = nn.Conv2d(dim, dim, 1)

    def _self(self, x):
        out, _ = windowed_attention(self.self_q(x), self.self_k(x), self.self_v(x),
                                    self.window)
        return x + self.self_proj(out)

    def _cross(self, x, other):
        out, _ = windowed_attention(self.cross_q(x), self.cross_k(other),
                                    self.cross_v(other), self.window)
        return x + self.cross_proj(out)

    def forward(self, f_r: torch.Tensor, f_t: torch.Tensor):
        r1 = self._self(f_r)
        t1 = self._self(f_t)
        return self._cross(r1, t1), self._cross(t1, r1)
