"""Cascaded recurrent matching network and its loss."""

from .attention import SelfCrossAttention, windowed_attention
from .blocks import ContextEncoder, ConvGRU, FlowHead, MotionEncoder, PyramidEncoder
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import SCALES, NetConfig, config_fingerprint, config_from_dict
from .corr import (
    bilinear_sample_nchw,
    corr_pyramid,
    global_corr,
    lookup,
    lookup_local,
    lookup_pyramid,
    neighborhood_offsets,
)
from .loss import iterate_weights, loss_matching
from .model import (
    MatchModel,
    MatchPrediction,
    UpdateBlock,
    build_model,
    forward_match,
    parameter_bytes,
    promote_scale,
    refine_step,
    seed_parameters,
    upsample_flow_full,
)

__all__ = [
    "SCALES", "CheckpointError", "ContextEncoder", "ConvGRU", "FlowHead",
    "MatchModel", "MatchPrediction", "MotionEncoder", "NetConfig", "PyramidEncoder",
    "SelfCrossAttention", "UpdateBlock", "bilinear_sample_nchw", "build_model",
    "config_fingerprint", "config_from_dict", "corr_pyramid", "forward_match",
    "global_corr", "iterate_weights", "load_checkpoint", "lookup", "lookup_local",
    "lookup_pyramid", "loss_matching", "neighborhood_offsets", "parameter_bytes",
    "promote_scale", "refine_step", "save_checkpoint", "seed_parameters",
    "upsample_flow_full",
    "windowed_attention",
]
