"""Independent reference implementations used to check the package.

Everything here is written as straight-line numpy (mostly per-pixel loops),
deliberately sharing no code with the package so the two can disagree.
"""

import numpy as np


def rot_axis_angle(axis, angle):
    """Rodrigues rotation matrix."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    kx, ky, kz = axis
    K = np.array([[0, -kz, ky], [kz, 0, -kx], [-ky, kx, 0]], dtype=np.float64)
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)


def reproject_loop(K_r, E_r, depth, K_t, E_t):
    """Per-pixel pinhole reprojection, going through world coordinates.

    Returns (flow, valid) with flow zeroed where the projection is undefined.
    """
    K_r = np.asarray(K_r, dtype=np.float64)
    K_t = np.asarray(K_t, dtype=np.float64)
    E_r = np.asarray(E_r, dtype=np.float64)
    E_t = np.asarray(E_t, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    h, w = depth.shape
    K_r_inv = np.linalg.inv(K_r)
    E_t_inv = np.linalg.inv(E_t)
    flow = np.zeros((h, w, 2), dtype=np.float64)
    valid = np.zeros((h, w), dtype=bool)
    for r in range(h):
        for c in range(w):
            d = depth[r, c]
            if not np.isfinite(d) or d <= 0:
                continue
            ray = K_r_inv @ np.array([c, r, 1.0])
            p_cam = d * ray
            p_world = E_r[:3, :3] @ p_cam + E_r[:3, 3]
            p_tgt = E_t_inv[:3, :3] @ p_world + E_t_inv[:3, 3]
            if p_tgt[2] <= 0:
                continue
            uvw = K_t @ p_tgt
            px, py = uvw[0] / uvw[2], uvw[1] / uvw[2]
            flow[r, c] = (px - c, py - r)
            valid[r, c] = (0 <= px <= w - 1) and (0 <= py <= h - 1)
    return flow, valid


def bilinear_loop(field, coords):
    """Per-sample bilinear interpolation with zero outside the raster."""
    field = np.asarray(field, dtype=np.float64)
    if field.ndim == 2:
        field = field[..., None]
    h, w, c = field.shape
    coords = np.asarray(coords, dtype=np.float64)
    flat = coords.reshape(-1, 2)
    vals = np.zeros((flat.shape[0], c))
    inb = np.zeros(flat.shape[0], dtype=bool)
    for i, (x, y) in enumerate(flat):
        x0, y0 = int(np.floor(x)), int(np.floor(y))
        wx, wy = x - x0, y - y0
        acc = np.zeros(c)
        for dy, fy in ((0, 1 - wy), (1, wy)):
            for dx, fx in ((0, 1 - wx), (1, wx)):
                xi, yi = x0 + dx, y0 + dy
                if 0 <= xi < w and 0 <= yi < h:
                    acc += fy * fx * field[yi, xi]
        vals[i] = acc
        inb[i] = (0 <= x <= w - 1) and (0 <= y <= h - 1)
    return vals.reshape(*coords.shape[:-1], c), inb.reshape(coords.shape[:-1])


def fb_mask_loop(m_r, m_t, alpha1, alpha2):
    """Forward-backward consistency, one pixel at a time."""
    m_r = np.asarray(m_r, dtype=np.float64)
    h, w = m_r.shape[:2]
    grid = np.stack(np.meshgrid(np.arange(w), np.arange(h)), axis=-1).astype(np.float64)
    m_t_w, inb = bilinear_loop(m_t, grid + m_r)
    out = np.zeros((h, w), dtype=bool)
    for r in range(h):
        for c in range(w):
            s = m_r[r, c] + m_t_w[r, c]
            lhs = s[0] ** 2 + s[1] ** 2
            mag = (m_r[r, c] ** 2).sum() + (m_t_w[r, c] ** 2).sum()
            out[r, c] = (lhs < alpha1 * mag + alpha2) and inb[r, c]
    return out


def dense_corr_loop(f_r, f_t):
    """All-paired correlation by explicit double loop.

    f_r: (D, H, W), f_t: (D, H2, W2) -> (H, W, H2, W2).
    """
    f_r = np.asarray(f_r, dtype=np.float64)
    f_t = np.asarray(f_t, dtype=np.float64)
    d, h, w = f_r.shape
    h2, w2 = f_t.shape[1:]
    out = np.zeros((h, w, h2, w2))
    for y in range(h):
        for x in range(w):
            for Y in range(h2):
                for X in range(w2):
                    out[y, x, Y, X] = float(f_r[:, y, x] @ f_t[:, Y, X]) / np.sqrt(d)
    return out


def dense_attention_tokens(q, k, v):
    """Unwindowed single-head attention over token matrices (N, C)."""
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    c = q.shape[1]
    logits = q @ k.T / np.sqrt(c)
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    return p @ v


def random_scene(rng, h=20, w=28, nan_frac=0.1):
    """Random intrinsics/poses/depth for reprojection cross-checks."""
    fx, fy = rng.uniform(30, 90, size=2)
    cx = (w - 1) / 2 + rng.uniform(-2, 2)
    cy = (h - 1) / 2 + rng.uniform(-2, 2)
    K_r = np.array([[fx, 0, cx], [0, fy, cy], [0, 0, 1.0]])
    K_t = K_r.copy()

    def pose(scale):
        axis = rng.normal(size=3)
        R = rot_axis_angle(axis, rng.uniform(-scale, scale))
        E = np.eye(4)
        E[:3, :3] = R
        E[:3, 3] = rng.uniform(-0.3, 0.3, size=3)
        return E

    E_r = pose(0.1)
    E_t = pose(0.1)
    depth = rng.uniform(2.0, 8.0, size=(h, w))
    mask = rng.random((h, w)) < nan_frac
    depth[mask] = np.nan
    return K_r, E_r, depth, K_t, E_t


# --- gradient probes ---------------------------------------------------------

def fd_probe(fn, inputs, rng, eps=1e-6):
    """One directional gradient check in float64.

    Projects the output onto a random weight tensor, differentiates along a
    random input direction, and returns the relative error between autograd
    and the central finite difference.  Callers pick inputs away from the
    functions' kinks (abs at zero, bilinear corners on integer coordinates).
    """
    import torch

    leaves = [x.detach().clone().requires_grad_(True) for x in inputs]
    out = fn(*leaves)
    w = torch.from_numpy(rng.standard_normal(tuple(out.shape)))
    grads = torch.autograd.grad((out * w).sum(), leaves, allow_unused=True)
    dirs = [torch.from_numpy(rng.standard_normal(tuple(x.shape))) for x in leaves]
    analytic = sum(float((g * d).sum()) for g, d in zip(grads, dirs) if g is not None)
    with torch.no_grad():
        plus = float((fn(*[x + eps * d for x, d in zip(leaves, dirs)]) * w).sum())
        minus = float((fn(*[x - eps * d for x, d in zip(leaves, dirs)]) * w).sum())
    numeric = (plus - minus) / (2.0 * eps)
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)


def _fractional_flow(rng, shape, span=1.2):
    """Flows bounded away from integer sampling coordinates."""
    import torch

    steps = rng.integers(-1, 2, size=shape).astype(np.float64)
    frac = rng.uniform(0.2, 0.8, size=shape)
    return torch.from_numpy(np.clip(steps + frac - 0.5, -span, span))


def gradient_probe_suite(per_family=30, seed=0):
    """(family, relative error) pairs across every differentiable path."""
    import torch

    from recmatch.netcore import corr_pyramid, global_corr, lookup, loss_matching
    from recmatch.uncertainty import loss_uncertainty, residuals

    rng = np.random.default_rng(seed)
    results = []

    def record(family, fn, inputs):
        results.append((family, fd_probe(fn, inputs, rng)))

    for _ in range(per_family):
        f_r = torch.from_numpy(rng.standard_normal((1, 3, 8, 8)))
        f_t = torch.from_numpy(rng.standard_normal((1, 3, 8, 8)))
        record("global_corr", global_corr, [f_r, f_t])

    for _ in range(per_family):
        f_r = torch.from_numpy(rng.standard_normal((1, 4, 8, 8)))
        f_t = torch.from_numpy(rng.standard_normal((1, 4, 8, 8)))
        flow = _fractional_flow(rng, (1, 2, 8, 8))
        record("lookup_pyramid",
               lambda a, b, f: lookup(corr_pyramid(global_corr(a, b), 2), f, 1, 8),
               [f_r, f_t, flow])

    for _ in range(per_family):
        f_r = torch.from_numpy(rng.standard_normal((1, 4, 8, 8)))
        f_t = torch.from_numpy(rng.standard_normal((1, 4, 8, 8)))
        flow = _fractional_flow(rng, (1, 2, 8, 8))
        record("lookup_local", lambda a, b, f: lookup((a, b), f, 1, 4), [f_r, f_t, flow])

    for _ in range(per_family):
        img_r = torch.from_numpy(rng.uniform(0.05, 0.95, (1, 3, 8, 8)))
        img_t = torch.from_numpy(rng.uniform(0.05, 0.95, (1, 3, 8, 8)))
        fh_r = torch.from_numpy(rng.standard_normal((1, 5, 4, 4)))
        fh_t = torch.from_numpy(rng.standard_normal((1, 5, 4, 4)))
        flow = _fractional_flow(rng, (1, 2, 8, 8))
        record("warp_residuals", residuals, [img_r, img_t, fh_r, fh_t, flow])

    for mode in ("dense", "sparse"):
        for _ in range(per_family):
            p1 = torch.from_numpy(rng.standard_normal((1, 2, 8, 8)))
            p2 = torch.from_numpy(rng.standard_normal((1, 2, 8, 8)))
            gt = torch.from_numpy(rng.standard_normal((1, 2, 8, 8)))
            valid = torch.from_numpy(rng.random((1, 8, 8)) < 0.6)
            valid[0, 4, 4] = True  # sparse mode needs a non-empty mask
            record(f"loss_matching_{mode}",
                   lambda a, b, g: loss_matching([a, b], g, valid, mode),
                   [p1, p2, gt])

    for _ in range(per_family):
        p_hat = torch.from_numpy(rng.uniform(0.1, 0.9, (1, 8, 8)))
        labels = torch.from_numpy(rng.random((1, 8, 8)) < 0.5)
        record("loss_uncertainty", lambda q: loss_uncertainty(q, labels), [p_hat])

    return results
