"""Skeletal motion estimation, smoothing and space-time retargeting."""

from .kinematics import (
    Motion,
    PoseParams,
    Skeleton,
    default_skeleton,
    end_effector_frames,
    fk,
    shape_to_offsets,
)

__version__ = "0.1.0"
