"""Evaluation surface: flow metrics, balanced sampling, two-view pose, reports."""

from .matches import MatchSet, balanced_sample
from .metrics import aepe, auc, f1_outliers, pck
from .pose import (
    PoseEstimate,
    estimate_pose,
    pose_error,
    relative_pose,
    rotation_angle_deg,
    sampson_distance,
)
from .report import (
    MetricReport,
    SampleMetrics,
    evaluate,
    pad_to_multiple,
    render_report,
    write_report,
)

__all__ = [
    "MatchSet", "MetricReport", "PoseEstimate", "SampleMetrics", "aepe", "auc",
    "balanced_sample", "estimate_pose", "evaluate", "f1_outliers", "pad_to_multiple",
    "pck", "pose_error", "relative_pose", "render_report", "rotation_angle_deg",
    "sampson_distance", "write_report",
]
