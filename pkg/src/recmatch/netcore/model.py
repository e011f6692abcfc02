"""The cascaded coarse-to-fine recurrent matcher.

Flow is estimated at 1/8 scale with an all-paired correlation pyramid, then
refined at 1/4 and 1/2 with local correlation, a ConvGRU carrying its hidden
state across scales through bilinear upsampling (never re-initialized), and
every intermediate estimate is upsampled to full resolution for supervision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .attention import SelfCrossAttention
from .blocks import ContextEncoder, ConvGRU, FlowHead, MotionEncoder, PyramidEncoder
from .config import SCALES, NetConfig
from .corr import corr_pyramid, global_corr, lookup, neighborhood_offsets


@dataclass
class MatchPrediction:
    """Ordered flow iterates, each upsampled to input resolution.

    entries: list of (scale denominator, iteration index, flow (B, 2, H, W));
    the last entry is the model output.  trace records hidden-state events
    for auditing the cross-scale hand-off.
    """

    entries: list
    trace: tuple = field(default_factory=tuple)

    @property
    def flows(self) -> list:
        return [e[2] for e in self.entries]

    @property
    def final(self) -> torch.Tensor:
        return self.entries[-1][2]

    def __len__(self) -> int:
        return len(self.entries)


class UpdateBlock(nn.Module):
    """One recurrent refinement unit: motion encoding, GRU, flow decoder."""

    def __init__(self, corr_channels: int, hidden_dim: int, context_dim: int):
        super().__init__()
        self.motion = MotionEncoder(corr_channels)
        self.gru = ConvGRU(hidden_dim, MotionEncoder.out_dim + context_dim)
        self.head = FlowHead(hidden_dim)

    def forward(self, hidden, context, corr_feat, flow):
        m = self.motion(corr_feat, flow)
        h = self.gru(hidden, torch.cat((m, context), dim=1))
        return h, self.head(h)


def promote_scale(hidden: torch.Tensor, flow: torch.Tensor, scale: int):
    """Hand state and flow to the next finer scale.

    Bilinear 2x upsampling for both; flow values are doubled because pixel
    units halve.  scale is the current denominator and must be 8 or 4.
    """
    if scale not in (8, 4):
        raise ValueError(f"no finer scale below 1/{scale}")
    up = lambda t: F.interpolate(t, scale_factor=2, mode="bilinear", align_corners=True)
    return up(hidden), up(flow) * 2.0


def upsample_flow_full(flow: torch.Tensor, scale: int) -> torch.Tensor:
    """Bring a 1/scale flow raster to full resolution (values scaled)."""
    if scale == 1:
        return flow
    up = F.interpolate(flow, scale_factor=scale, mode="bilinear", align_corners=True)
    return up * float(scale)


class MatchModel(nn.Module):
    def __init__(self, config: NetConfig = NetConfig()):
        super().__init__()
        self.config = config
        self.encoder = PyramidEncoder(config.widths)
        self.context = ContextEncoder(config.hidden_dim, config.context_dim)
        self.attn = nn.ModuleDict({
            "8": SelfCrossAttention(config.widths[0], config.window),
            "4": SelfCrossAttention(config.widths[1], config.window),
        })
        k = {r: len(neighborhood_offsets(r, config.lookup_window)) for r in set(config.radii)}
        corr_ch = {
            8: (config.corr_levels + 1) * k[config.radii[0]],
            4: k[config.radii[1]],
            2: k[config.radii[2]],
        }
        self.update = nn.ModuleDict({
            str(s): UpdateBlock(corr_ch[s], config.hidden_dim, config.context_dim)
            for s in SCALES
        })
        self.init_seed = None  # set by build_model

    def enhance(self, f_r: torch.Tensor, f_t: torch.Tensor, scale: int):
        """Self + cross attention at 1/8 or 1/4; the finest scale is refined
        on raw features only."""
        if scale not in (8, 4):
            raise ValueError(f"enhancement is applied at 1/8 and 1/4 only, not 1/{scale}")
        return self.attn[str(scale)](f_r, f_t)

    def half_scale_features(self, image: torch.Tensor) -> torch.Tensor:
        """Raw encoder tap at 1/2 scale (input to the uncertainty stage)."""
        return self.encoder(image)[2]

    def forward(self, ref: torch.Tensor, tgt: torch.Tensor) -> MatchPrediction:
        if ref.shape != tgt.shape:
            raise ValueError(f"image shapes differ: {tuple(ref.shape)} vs {tuple(tgt.shape)}")
        cfg = self.config
        feats_r = self.encoder(ref)
        feats_t = self.encoder(tgt)
        hidden, contexts = self.context(ref)

        b = ref.shape[0]
        h8, w8 = feats_r[8].shape[2], feats_r[8].shape[3]
        flow = torch.zeros(b, 2, h8, w8, dtype=ref.dtype, device=ref.device)

        trace = [("init", 8)]
        entries = []
        for si, scale in enumerate(SCALES):
            if scale in (8, 4):
                f_r_s, f_t_s = self.enhance(feats_r[scale], feats_t[scale], scale)
            else:
                f_r_s, f_t_s = feats_r[2], feats_t[2]
            if scale == 8:
                source = corr_pyramid(global_corr(f_r_s, f_t_s), cfg.corr_levels)
            else:
                source = (f_r_s, f_t_s)
            block = self.update[str(scale)]
            for it in range(cfg.iterations[si]):
                corr_feat = lookup(source, flow, cfg.radii[si], scale, cfg.lookup_window)
                hidden, dflow = block(hidden, contexts[scale], corr_feat, flow)
                flow = flow + dflow
                entries.append((scale, it, upsample_flow_full(flow, scale)))
            if scale != 2:
                hidden, flow = promote_scale(hidden, flow, scale)
                trace.append(("promote", scale, scale // 2))
        return MatchPrediction(entries=entries, trace=tuple(trace))


def refine_step(block: UpdateBlock, hidden, context, corr_feat, flow):
    """One gated update: returns (hidden', delta-flow); caller adds the delta."""
    return block(hidden, context, corr_feat, flow)


def forward_match(model: MatchModel, ref: torch.Tensor, tgt: torch.Tensor) -> MatchPrediction:
    """Full cascaded pass over an image pair (B, 3, H, W) in [0, 1]."""
    return model(ref, tgt)


def seed_parameters(module: nn.Module, seed: int) -> None:
    """Reinitialize parameters as a pure function of (architecture, seed).

    Draws from a single seeded generator in named-parameter order: weights
    uniform in ±1/sqrt(fan_in), biases zero.  Two calls on identically built
    modules produce bit-identical parameters.
    """
    g = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for _, p in module.named_parameters():
            if p.dim() >= 2:
                fan_in = p[0].numel()
                bound = (1.0 / fan_in) ** 0.5
                p.copy_((torch.rand(p.shape, generator=g) * 2.0 - 1.0) * bound)
            else:
                p.zero_()


def build_model(config: NetConfig, seed: int) -> MatchModel:
    """Construct a model whose parameters are a pure function of (config, seed)."""
    model = MatchModel(config)
    seed_parameters(model, seed)
    model.init_seed = int(seed)
    return model


def parameter_bytes(model: nn.Module, only_prefixes=None) -> bytes:
    """Concatenated little-endian float32 bytes of parameters in name order.

    Used for byte-level freeze audits; optionally restricted to parameters
    whose names start with one of `only_prefixes`.
    """
    chunks = []
    for name, p in model.named_parameters():
        if only_prefixes is not None and not any(name.startswith(pre) for pre in only_prefixes):
            continue
        chunks.append(p.detach().to(torch.float32).contiguous().numpy().tobytes())
    return b"".join(chunks)
