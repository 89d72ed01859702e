"""Lift per-frame pose estimates into one camera frame with a shared shape."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .kinematics import Motion, PoseParams, Skeleton, default_skeleton, fk, validate_beta
from .solver import ConvergenceWarning, RejectStep, ResidualProblem, solve_nlsq

log = logging.getLogger(__name__)

DEPTH_EPS = 1e-6


class BehindCameraError(RejectStep, ValueError):
    pass


class EstimationError(RuntimeError):
    pass


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")

    @classmethod
    def default_for_image(cls, width: float, height: float) -> "CameraIntrinsics":
        f = 1.1 * width
        return cls(f, f, width / 2.0, height / 2.0)

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass
class ObservationFrame:
    """Upstream per-frame estimate plus its 2D joint detections.

    ``translation_init`` or the weak-perspective ``scale`` (pixels per
    metre) seed the root translation; without either the scale is inferred
    from the spread of the detections.
    """

    joints_2d: np.ndarray  # (24, 2) pixels
    confidence: np.ndarray  # (24,)
    theta_init: np.ndarray  # (24, 3)
    beta_init: np.ndarray  # (10,)
    translation_init: Optional[np.ndarray] = None
    scale: Optional[float] = None

    def __post_init__(self):
        self.joints_2d = np.asarray(self.joints_2d, dtype=float)
        self.confidence = np.asarray(self.confidence, dtype=float)
        self.theta_init = np.asarray(self.theta_init, dtype=float).reshape(-1, 3)
        self.beta_init = validate_beta(self.beta_init)
        n = len(self.theta_init)
        if self.joints_2d.shape != (n, 2) or self.confidence.shape != (n,):
            raise ValueError(f"expected {n} 2D joints and {n} confidences")
        if np.any((self.confidence < 0) | (self.confidence > 1)):
            raise ValueError("confidences must lie in [0, 1]")
        if self.translation_init is not None:
            self.translation_init = np.asarray(self.translation_init, dtype=float).reshape(3)
        if self.scale is not None and not self.scale > 0:
            raise ValueError("weak-perspective scale must be positive")


@dataclass
class EstimationConfig:
    lambda1: float = 1e-6
    lambda2: float = 1e-2
    max_iters: int = 100
    tol: float = 1e-10

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda weights must be nonnegative")
        if self.max_iters < 1 or not self.tol > 0:
            raise ValueError("max_iters must be >= 1 and tol > 0")


def average_shape(frames: Sequence[ObservationFrame]) -> np.ndarray:
    if len(frames) == 0:
        raise ValueError("cannot average the shape of an empty clip")
    return np.mean([f.beta_init for f in frames], axis=0)


def project_points(K: CameraIntrinsics, points):
    """Pinhole projection ``(..., 3) -> (..., 2)``; dual-aware."""
    z = points[..., 2]
    bad = np.flatnonzero(ad.value(z).reshape(-1) <= DEPTH_EPS)
    if bad.size:
        raise BehindCameraError(f"point {int(bad[0])} is behind or at the camera plane")
    u = K.fx * points[..., 0] / z + K.cx
    v = K.fy * points[..., 1] / z + K.cy
    return ad.stack([u, v], axis=-1)


def project_joints(K: CameraIntrinsics, positions) -> np.ndarray:
    return project_points(K, positions)


def initial_translation(
    obs: ObservationFrame, skeleton: Skeleton, beta_s, K: CameraIntrinsics
) -> np.ndarray:
    """Root translation that places the initial pose under its detections."""
    if obs.translation_init is not None:
        return obs.translation_init.copy()
    P = fk(skeleton, skeleton.offsets(beta_s), obs.theta_init, np.zeros(3)).positions
    w = obs.confidence
    if w.sum() <= 0:
        w = np.ones_like(w)
    w = w / w.sum()
    uv_mean = w @ obs.joints_2d
    P_mean = w @ P
    if obs.scale is not None:
        s = obs.scale
    else:
        spread_2d = w @ np.sum((obs.joints_2d - uv_mean) ** 2, axis=1)
        spread_3d = w @ np.sum((P[:, :2] - P_mean[:2]) ** 2, axis=1)
        s = np.sqrt(spread_2d / spread_3d)
    f = 0.5 * (K.fx + K.fy)
    z = f / s
    x = (uv_mean[0] - K.cx) * z / K.fx
    y = (uv_mean[1] - K.cy) * z / K.fy
    return np.array([x, y, z]) - P_mean


def pose_energy_problem(
    obs: ObservationFrame, skeleton: Skeleton, beta_s, K: CameraIntrinsics, cfg: EstimationConfig
) -> ResidualProblem:
    """Residuals whose squared norm is ``lambda1 * E_J + lambda2 * E_theta``.

    E_J is the confidence-weighted squared reprojection error in pixels,
    E_theta the squared axis-angle deviation from the upstream estimate.
    """
    offsets = skeleton.offsets(beta_s)
    J = skeleton.joint_count
    w_proj = np.sqrt(cfg.lambda1 * obs.confidence)[:, None]
    w_prior = np.sqrt(cfg.lambda2)
    target = obs.joints_2d
    theta0 = obs.theta_init

    def evaluate(x):
        theta = x[: 3 * J].reshape(J, 3)
        t = x[3 * J :]
        uv = project_points(K, fk(skeleton, offsets, theta, t).positions)
        r_proj = (uv - target) * w_proj
        r_prior = (theta - theta0) * w_prior
        return ad.concatenate([r_proj.reshape(-1), r_prior.reshape(-1)])

    return ResidualProblem(3 * J + 3, 2 * J + 3 * J, evaluate)


def reprojection_errors(obs: ObservationFrame, skeleton: Skeleton, beta_s, K, pose: PoseParams):
    """Per-joint pixel distance between projected pose and detections."""
    P = fk(skeleton, skeleton.offsets(beta_s), pose.theta, pose.root_translation).positions
    return np.linalg.norm(project_joints(K, P) - obs.joints_2d, axis=1)


def refine_frame(
    obs: ObservationFrame,
    beta_s,
    K: CameraIntrinsics,
    cfg: EstimationConfig = EstimationConfig(),
    skeleton: Optional[Skeleton] = None,
):
    """Minimise the camera-consistent pose energy for one frame.

    Optimises joint angles and root translation jointly with the shape
    frozen at ``beta_s``.  Returns ``(PoseParams, SolveReport)``.
    """
    skeleton = skeleton or default_skeleton()
    problem = pose_energy_problem(obs, skeleton, beta_s, K, cfg)
    x0 = np.concatenate([obs.theta_init.reshape(-1), initial_translation(obs, skeleton, beta_s, K)])
    x, report = solve_nlsq(problem, x0, max_iters=cfg.max_iters, tol=cfg.tol)
    if report.status == "max_iters":
        warnings.warn(f"pose refinement hit max_iters ({cfg.max_iters})", ConvergenceWarning)
    return PoseParams.from_vector(x), report


def estimate_motion(
    frames: Sequence[ObservationFrame],
    K: CameraIntrinsics,
    cfg: EstimationConfig = EstimationConfig(),
    skeleton: Optional[Skeleton] = None,
    fps: float = 30.0,
):
    """Refine every frame against one averaged shape.

    Returns ``(Motion, reports)`` with one SolveReport per frame.
    """
    skeleton = skeleton or default_skeleton()
    beta_s = average_shape(frames)
    poses, reports = [], []
    for k, obs in enumerate(frames):
        try:
            pose, report = refine_frame(obs, beta_s, K, cfg, skeleton)
        except Exception as exc:
            raise EstimationError(f"frame {k}: {exc}") from exc
        log.debug("frame %d: %s after %d iterations", k, report.status, report.iterations)
        poses.append(pose)
        reports.append(report)
    return Motion.from_frames(poses, fps, beta_s), reports
