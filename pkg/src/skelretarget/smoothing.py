"""Motion regularisation by IK against temporally filtered joint targets."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from . import autodiff as ad
from .kinematics import Motion, PoseParams, Skeleton, default_skeleton, fk, rotation_error
from .solver import ConvergenceWarning, ResidualProblem, solve_nlsq


@dataclass
class SmoothingConfig:
    gamma: float = 10.0
    filter_radius: int = 2
    max_iters: int = 50
    tol: float = 1e-10

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        if self.filter_radius < 0:
            raise ValueError("filter_radius must be nonnegative")


class FrameTargets(NamedTuple):
    positions: np.ndarray  # (J, 3)
    ee_orientations: np.ndarray  # (E, 3, 3)


def moving_average(x: np.ndarray, radius: int) -> np.ndarray:
    """Centred mean over ``2*radius + 1`` frames along axis 0, truncated at the ends."""
    x = np.asarray(x, dtype=float)
    if radius == 0:
        return x.copy()
    n = len(x)
    csum = np.concatenate([np.zeros((1,) + x.shape[1:]), np.cumsum(x, axis=0)])
    lo = np.clip(np.arange(n) - radius, 0, n)
    hi = np.clip(np.arange(n) + radius + 1, 0, n)
    count = (hi - lo).reshape((-1,) + (1,) * (x.ndim - 1))
    return (csum[hi] - csum[lo]) / count


def build_targets(motion: Motion, skeleton: Skeleton, offsets, radius: int) -> list:
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    poses = fk(skeleton, offsets, motion.theta, motion.translation)
    smoothed = moving_average(poses.positions, radius)
    ee = np.asarray(skeleton.end_effectors)
    return [FrameTargets(smoothed[k], poses.rotations[k][ee]) for k in range(len(motion))]


def ik_problem(targets: FrameTargets, skeleton: Skeleton, offsets, gamma: float) -> ResidualProblem:
    """Residuals whose squared norm is the IK cost of one frame.

    Positions of all joints plus ``gamma``-weighted Frobenius orientation
    error of the end-effectors; variables are joint angles and root
    translation.
    """
    J = skeleton.joint_count
    ee = np.asarray(skeleton.end_effectors)
    w_rot = np.sqrt(gamma)

    def evaluate(x):
        pose = fk(skeleton, offsets, x[: 3 * J].reshape(J, 3), x[3 * J :])
        r_pos = pose.positions - targets.positions
        r_rot = rotation_error(pose.rotations[ee], targets.ee_orientations) * w_rot
        return ad.concatenate([r_pos.reshape(-1), r_rot.reshape(-1)])

    return ResidualProblem(3 * J + 3, 3 * J + 9 * len(ee), evaluate)


def ik_fit_frame(
    targets: FrameTargets,
    beta,
    theta_init: PoseParams,
    cfg: SmoothingConfig = SmoothingConfig(),
    skeleton: Optional[Skeleton] = None,
):
    """Warm-started IK fit of one frame; returns ``(PoseParams, SolveReport)``."""
    skeleton = skeleton or default_skeleton()
    problem = ik_problem(targets, skeleton, skeleton.offsets(beta), cfg.gamma)
    x, report = solve_nlsq(problem, theta_init.to_vector(), max_iters=cfg.max_iters, tol=cfg.tol)
    if report.status == "max_iters":
        warnings.warn(f"IK fit hit max_iters ({cfg.max_iters})", ConvergenceWarning)
    return PoseParams.from_vector(x), report


def smooth_motion(
    motion: Motion,
    beta=None,
    cfg: SmoothingConfig = SmoothingConfig(),
    skeleton: Optional[Skeleton] = None,
):
    """Refit every frame to the filtered targets; returns ``(Motion, reports)``."""
    skeleton = skeleton or default_skeleton()
    beta = motion.beta if beta is None else np.asarray(beta, dtype=float)
    offsets = skeleton.offsets(beta)
    targets = build_targets(motion, skeleton, offsets, cfg.filter_radius)
    frames, reports = [], []
    for k, tgt in enumerate(targets):
        try:
            pose, report = ik_fit_frame(tgt, beta, motion[k], cfg, skeleton)
        except Exception as exc:
            raise RuntimeError(f"frame {k}: {exc}") from exc
        frames.append(pose)
        reports.append(report)
    return Motion.from_frames(frames, motion.fps, beta), reports


def second_difference_energy(positions: np.ndarray) -> float:
    """Mean squared second difference of ``(N, J, 3)`` positions, m^2."""
    positions = np.asarray(positions, dtype=float)
    if len(positions) < 3:
        return 0.0
    d2 = positions[2:] - 2.0 * positions[1:-1] + positions[:-2]
    return float(np.mean(np.sum(d2 * d2, axis=-1)))
