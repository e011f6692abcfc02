"""Correlation volumes and local lookup.

The full volume at 1/8 scale holds every reference-target feature dot
product, scaled by 1/sqrt(D).  Coarser pyramid levels average-pool the
target dimensions only.  At the finer scales correlation is computed on the
fly inside a local window around the current flow target.

Sampling shares the package's bilinear conventions: pixel centers at integer
coordinates, out-of-bounds corners contribute zero.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F


def bilinear_sample_nchw(field: torch.Tensor, coords: torch.Tensor) -> torch.Tensor:
    """Sample (N, C, H, W) at per-item points (N, P, 2) in (x, y); -> (N, C, P).

    Out-of-bounds corners are zero, matching geometry.bilinear_sample.
    """
    n, c, h, w = field.shape
    x = coords[..., 0]
    y = coords[..., 1]
    x0 = torch.floor(x)
    y0 = torch.floor(y)
    wx = (x - x0).unsqueeze(1)
    wy = (y - y0).unsqueeze(1)
    x0i = x0.long()
    y0i = y0.long()

    flat = field.reshape(n, c, h * w)

    def corner(xi, yi):
        ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        idx = (yi.clamp(0, h - 1) * w + xi.clamp(0, w - 1)).unsqueeze(1).expand(n, c, -1)
        vals = torch.gather(flat, 2, idx)
        return torch.where(ok.unsqueeze(1), vals, torch.zeros((), dtype=field.dtype))

    v00 = corner(x0i, y0i)
    v01 = corner(x0i + 1, y0i)
    v10 = corner(x0i, y0i + 1)
    v11 = corner(x0i + 1, y0i + 1)
    return (
        v00 * (1 - wx) * (1 - wy)
        + v01 * wx * (1 - wy)
        + v10 * (1 - wx) * wy
        + v11 * wx * wy
    )


def global_corr(f_r: torch.Tensor, f_t: torch.Tensor) -> torch.Tensor:
    """All-paired volume C[x][y] = <F_r(x), F_t(y)> / sqrt(D).

    f_r, f_t: (B, D, H, W).  Returns (B, H, W, H2, W2).
    """
    if f_r.dim() != 4 or f_t.dim() != 4:
        raise ValueError("feature maps must be (B, D, H, W)")
    if f_r.shape[1] != f_t.shape[1]:
        raise ValueError(f"feature widths differ: {f_r.shape[1]} vs {f_t.shape[1]}")
    b, d, h, w = f_r.shape
    h2, w2 = f_t.shape[2], f_t.shape[3]
    corr = torch.einsum("bdhw,bdHW->bhwHW", f_r, f_t)
    return corr / (d ** 0.5)


def corr_pyramid(level0: torch.Tensor, levels: int) -> list:
    """[level0, pooled once, ..., pooled `levels` times]; target dims halve
    (ceil) each level via 2x2 mean pooling, reference dims untouched."""
    if levels < 0:
        raise ValueError("levels must be >= 0")
    b, h, w, h2, w2 = level0.shape
    out = [level0]
    cur = level0.reshape(b * h * w, 1, h2, w2)
    for _ in range(levels):
        cur = F.avg_pool2d(cur, kernel_size=2, stride=2, ceil_mode=True,
                           count_include_pad=False)
        out.append(cur.reshape(b, h, w, cur.shape[2], cur.shape[3]))
    return out


def neighborhood_offsets(r: int, window: str = "square", dtype=torch.float32) -> torch.Tensor:
    """(K, 2) grid offsets in (dx, dy), row-major with dy varying slowest.

    "square": the (2r+1)^2 window (max-norm ball); "l1": the diamond
    |dx| + |dy| <= r with 2r^2 + 2r + 1 offsets.
    """
    if r < 0:
        raise ValueError("radius must be >= 0")
    offs = []
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            if window == "square" or abs(dx) + abs(dy) <= r:
                offs.append((dx, dy))
    if window not in ("square", "l1"):
        raise ValueError(f"unknown window {window!r}")
    return torch.tensor(offs, dtype=dtype)


def lookup_pyramid(pyramid: list, flow: torch.Tensor, r: int,
                   window: str = "square") -> torch.Tensor:
    """Correlation features from a precomputed pyramid (1/8 scale).

    flow: (B, 2, H, W) at the volume's reference resolution.  For level l
    the window is centered at (x + flow) / 2^l in level-l target pixels.
    Returns (B, L*K, H, W) with K samples per level.
    """
    b, h, w = pyramid[0].shape[0], pyramid[0].shape[1], pyramid[0].shape[2]
    offs = neighborhood_offsets(r, window, dtype=flow.dtype)  # (K, 2)
    k = offs.shape[0]
    gy, gx = torch.meshgrid(
        torch.arange(h, dtype=flow.dtype), torch.arange(w, dtype=flow.dtype), indexing="ij"
    )
    grid = torch.stack((gx, gy), dim=0)  # (2, H, W)
    target = grid.unsqueeze(0) + flow    # (B, 2, H, W)

    feats = []
    for lvl, vol in enumerate(pyramid):
        h2, w2 = vol.shape[3], vol.shape[4]
        centers = target.permute(0, 2, 3, 1).reshape(b * h * w, 1, 2) / (2 ** lvl)
        pts = centers + offs.reshape(1, k, 2)                      # (BHW, K, 2)
        field = vol.reshape(b * h * w, 1, h2, w2)
        sampled = bilinear_sample_nchw(field, pts)                 # (BHW, 1, K)
        feats.append(sampled.reshape(b, h, w, k).permute(0, 3, 1, 2))
    return torch.cat(feats, dim=1)


def lookup_local(f_r: torch.Tensor, f_t: torch.Tensor, flow: torch.Tensor, r: int,
                 window: str = "square") -> torch.Tensor:
    """On-the-fly local correlation at the finer scales.

    For each pixel x: <F_r(x), F_t(x + flow + dx)> / sqrt(D) over window
    offsets dx.  Returns (B, K, H, W).
    """
    if f_r.shape[1] != f_t.shape[1]:
        raise ValueError(f"feature widths differ: {f_r.shape[1]} vs {f_t.shape[1]}")
    b, d, h, w = f_r.shape
    offs = neighborhood_offsets(r, window, dtype=flow.dtype)
    k = offs.shape[0]
    gy, gx = torch.meshgrid(
        torch.arange(h, dtype=flow.dtype), torch.arange(w, dtype=flow.dtype), indexing="ij"
    )
    grid = torch.stack((gx, gy), dim=0)
    target = (grid.unsqueeze(0) + flow).permute(0, 2, 3, 1)        # (B, H, W, 2)
    pts = target.reshape(b, h * w, 1, 2) + offs.reshape(1, 1, k, 2)
    sampled = bilinear_sample_nchw(f_t, pts.reshape(b, h * w * k, 2))
    sampled = sampled.reshape(b, d, h * w, k)
    ref = f_r.reshape(b, d, h * w, 1)
    corr = (sampled * ref).sum(dim=1) / (d ** 0.5)                 # (B, HW, K)
    return corr.permute(0, 2, 1).reshape(b, k, h, w)


def lookup(source, flow: torch.Tensor, r: int, scale: int,
           window: str = "square") -> torch.Tensor:
    """Scale-dispatching correlation lookup.

    scale 8: `source` is the precomputed pyramid (list of volumes).
    scale 4 or 2: `source` is the (F_r, F_t) feature pair, correlated on the
    fly within the window.
    """
    if r < 0:
        raise ValueError("radius must be >= 0")
    if scale == 8:
        return lookup_pyramid(source, flow, r, window)
    if scale in (4, 2):
        f_r, f_t = source
        return lookup_local(f_r, f_t, flow, r, window)
    raise ValueError(f"scale must be one of 8, 4, 2; got {scale}")
