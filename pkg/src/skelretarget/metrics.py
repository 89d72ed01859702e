"""Diagnostics of a retargeted motion, all measured through FK."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .kinematics import Motion, Skeleton, default_skeleton, motion_positions
from .retarget import Constraint, RetargetResult
from .smoothing import second_difference_energy


@dataclass
class MetricsReport:
    constraint_errors: list  # metres, one per constraint
    smoothness: float  # mean squared second difference of joint positions, m^2
    max_frame_jump: float  # largest joint displacement between consecutive frames, m
    per_window_cost: list = field(default_factory=list)
    source_smoothness: float = 0.0
    source_max_frame_jump: float = 0.0
    constraints_satisfied: list = field(default_factory=list)

    def __post_init__(self):
        values = list(self.constraint_errors) + list(self.per_window_cost)
        values += [self.smoothness, self.max_frame_jump, self.source_smoothness, self.source_max_frame_jump]
        if not all(np.isfinite(v) and v >= 0 for v in values):
            raise ValueError("metrics must be finite and nonnegative")

    def as_dict(self) -> dict:
        return asdict(self)


def max_frame_jump(positions: np.ndarray, joint: Optional[int] = None) -> float:
    """Largest per-joint displacement between consecutive frames."""
    P = np.asarray(positions, dtype=float)
    if joint is not None:
        P = P[:, joint : joint + 1]
    if len(P) < 2:
        return 0.0
    return float(np.max(np.linalg.norm(np.diff(P, axis=0), axis=-1)))


def compute_metrics(
    source: Motion,
    result: Union[RetargetResult, Motion],
    constraints: Sequence[Constraint] = (),
    skeleton: Optional[Skeleton] = None,
    joint=None,
) -> MetricsReport:
    """Constraint errors, smoothness and frame jumps of ``result``.

    ``joint`` restricts the frame-jump measure to one joint (name or
    index); by default the maximum runs over all joints.
    """
    skeleton = skeleton or default_skeleton()
    if isinstance(result, RetargetResult):
        motion, costs = result.motion, list(result.per_window_cost)
    else:
        motion, costs = result, []
    if len(motion) != len(source):
        raise ValueError(f"length mismatch: source has {len(source)} frames, result {len(motion)}")
    j = None if joint is None else skeleton.index(joint)

    P = motion_positions(skeleton, motion)
    P_s = motion_positions(skeleton, source)
    errors = []
    for c in constraints:
        if not 0 <= c.frame < len(motion):
            raise ValueError(f"constraint frame {c.frame} outside motion of {len(motion)} frames")
        errors.append(float(np.linalg.norm(P[c.frame, c.joint] - c.target_position)))
    return MetricsReport(
        constraint_errors=errors,
        smoothness=second_difference_energy(P),
        max_frame_jump=max_frame_jump(P, j),
        per_window_cost=[float(c) for c in costs],
        source_smoothness=second_difference_energy(P_s),
        source_max_frame_jump=max_frame_jump(P_s, j),
        constraints_satisfied=[e <= c.tolerance for e, c in zip(errors, constraints)],
    )
