"""Synthetic motions and observations with known ground truth."""

from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation

from .estimation import CameraIntrinsics, ObservationFrame, project_joints
from .kinematics import N_BETAS, Motion, Skeleton, fk
from .retarget import Constraint

# root orientation that turns a y-up, z-forward body upright in a y-down
# camera frame, facing the camera
CAMERA_UPRIGHT = np.array([np.pi, 0.0, 0.0])

ARM_BETA = 2  # shape component that scales the arm bones


def random_pose(rng, joint_count=24, spread=0.3):
    """Random axis-angle pose with the root left at identity."""
    theta = rng.normal(0.0, spread, (joint_count, 3))
    theta[0] = 0.0
    return theta


def rest_stance(skeleton: Skeleton) -> np.ndarray:
    """Arms lowered to the sides from the T-pose."""
    theta = np.zeros((skeleton.joint_count, 3))
    names = skeleton.names
    if "left_shoulder" in names:
        theta[names.index("left_shoulder")] = [0.0, 0.0, -1.2]
        theta[names.index("right_shoulder")] = [0.0, 0.0, 1.2]
    return theta


def sine_motion(skeleton: Skeleton, n_frames=90, fps=30.0, amplitude=0.3, seed=0,
                freq_range=(0.1, 0.5)) -> Motion:
    """Every joint angle oscillates smoothly with its own frequency and phase.

    ``freq_range`` is in Hz; the default keeps hand speeds near everyday
    motion (well under 1 m/s).
    """
    rng = np.random.default_rng(seed)
    J = skeleton.joint_count
    freq = rng.uniform(freq_range[0], freq_range[1], (J, 3))
    phase = rng.uniform(0.0, 2 * np.pi, (J, 3))
    amp = amplitude * rng.uniform(0.5, 1.0, (J, 3))
    t = np.arange(n_frames)[:, None, None] / fps
    theta = rest_stance(skeleton)[None] + amp * np.sin(2 * np.pi * freq * t + phase)
    theta[:, 0] *= 0.3
    trans = np.stack(
        [0.2 * np.sin(0.5 * t[:, 0, 0]), 0.9 + 0.02 * np.sin(1.3 * t[:, 0, 0]), 0.3 * t[:, 0, 0]],
        axis=1,
    )
    return Motion(theta, trans, fps)


def random_motion(skeleton: Skeleton, n_frames=60, fps=30.0, seed=0) -> Motion:
    """Smooth random clip: a random base pose plus low-frequency sine wobble."""
    rng = np.random.default_rng(seed)
    base = random_pose(rng, skeleton.joint_count, 0.3)
    base[0] = rng.normal(0.0, 0.2, 3)
    m = sine_motion(skeleton, n_frames, fps, amplitude=0.2, seed=seed + 1000, freq_range=(0.3, 1.0))
    return Motion(m.theta + base, m.translation, fps)


def add_angle_noise(motion: Motion, sigma: float, seed=0) -> Motion:
    rng = np.random.default_rng(seed)
    return Motion(motion.theta + rng.normal(0.0, sigma, motion.theta.shape), motion.translation.copy(),
                  motion.fps, motion.beta.copy())


def _bump(k, centre, width):
    return np.exp(-(((k - centre) / width) ** 2))


def _axis_rotation(axis, angles):
    v = np.zeros((len(angles), 3))
    v[:, "xyz".index(axis)] = angles
    return Rotation.from_rotvec(v)


def pick_up_box(skeleton: Skeleton, n_frames=180, fps=30.0, contact_frames=(47, 138), arm_scale=0.9,
                constraint_weight=100.0):
    """Clip in which the character crouches and puts the left hand on a box twice.

    Returns ``(source, beta_source, beta_target, constraints)``.  The target
    differs from the source only in arm length (``arm_scale``).  The
    constraints pin the left hand to where the source hand touches the box;
    ``constraint_weight`` is their entry in the constraint weight matrix.
    """
    names = skeleton.names
    k = np.arange(n_frames, dtype=float)
    reach = sum(_bump(k, c, 18.0) for c in contact_frames)
    sway = np.sin(2 * np.pi * k / n_frames)

    theta = np.repeat(rest_stance(skeleton)[None], n_frames, axis=0)

    def add(joint, axis_angle):
        theta[:, names.index(joint)] += np.asarray(axis_angle)

    # +x bends the spine forward; -x flexes hips, +x flexes knees
    for j, share in (("spine1", 0.3), ("spine2", 0.35), ("spine3", 0.35)):
        add(j, np.outer(reach * share * 0.8, [1.0, 0.0, 0.0]))
    add("neck", np.outer(reach, [-0.3, 0.0, 0.0]))
    for j in ("left_hip", "right_hip"):
        add(j, np.outer(reach, [-0.7, 0.0, 0.0]))
    for j in ("left_knee", "right_knee"):
        add(j, np.outer(reach, [1.1, 0.0, 0.0]))
    for j in ("left_ankle", "right_ankle"):
        add(j, np.outer(reach, [-0.4, 0.0, 0.0]))

    # left arm: lowered to the side, swung forward about the collar's x axis
    lowered = Rotation.from_rotvec(rest_stance(skeleton)[names.index("left_shoulder")])
    swing = _axis_rotation("x", -1.0 * reach) * _axis_rotation("y", -0.25 * reach)
    theta[:, names.index("left_shoulder")] = (swing * lowered).as_rotvec()
    add("left_elbow", np.outer(0.5 * reach + 0.15, [0.0, -1.0, 0.0]))
    add("left_wrist", np.outer(reach, [0.0, 0.0, -0.3]))
    add("right_shoulder", np.outer(0.15 * sway, [1.0, 0.0, 0.0]))
    add("right_elbow", np.outer(0.2 + 0.1 * sway, [0.0, 1.0, 0.0]))

    trans = np.stack([0.05 * sway, 0.92 - 0.14 * reach, 0.15 * k / n_frames], axis=1)
    source = Motion(theta, trans, fps)

    beta_s = np.zeros(N_BETAS)
    beta_t = np.zeros(N_BETAS)
    b = skeleton.shape_basis[names.index("left_elbow"), ARM_BETA]
    beta_t[ARM_BETA] = (arm_scale - 1.0) / b

    hand = names.index("left_hand")
    P = fk(skeleton, skeleton.offsets(beta_s), source.theta, source.translation).positions
    constraints = [
        Constraint(int(f), hand, P[f, hand].copy(), tolerance=0.005, weight=constraint_weight)
        for f in contact_frames
    ]
    return source, beta_s, beta_t, constraints


def camera_clip(skeleton: Skeleton, n_frames=60, fps=30.0, depth=3.0, seed=0) -> Motion:
    """Random-pose clip expressed in a camera frame, ``depth`` metres away."""
    m = random_motion(skeleton, n_frames, fps, seed)
    theta = m.theta.copy()
    theta[:, 0] = CAMERA_UPRIGHT + 0.1 * (m.theta[:, 0] - m.theta[:1, 0])
    k = np.arange(n_frames) / fps
    trans = np.stack([0.3 * np.sin(0.7 * k), 0.1 + 0.05 * np.cos(k), depth + 0.2 * np.sin(0.4 * k)], axis=1)
    return Motion(theta, trans, fps)


def synthetic_observations(
    skeleton: Skeleton,
    truth: Motion,
    K: CameraIntrinsics,
    beta=None,
    angle_noise=0.0,
    beta_jitter=0.0,
    seed=0,
    with_translation=False,
) -> list:
    """Project ground truth to 2D and corrupt the upstream angle/shape guesses."""
    rng = np.random.default_rng(seed)
    beta = np.zeros(N_BETAS) if beta is None else np.asarray(beta, dtype=float)
    P = fk(skeleton, skeleton.offsets(beta), truth.theta, truth.translation).positions
    frames = []
    for k in range(len(truth)):
        theta0 = truth.theta[k] + rng.normal(0.0, angle_noise, truth.theta[k].shape)
        beta0 = beta + rng.normal(0.0, beta_jitter, N_BETAS)
        frames.append(
            ObservationFrame(
                joints_2d=project_joints(K, P[k]),
                confidence=np.ones(skeleton.joint_count),
                theta_init=theta0,
                beta_init=beta0,
                translation_init=truth.translation[k].copy() if with_translation else None,
            )
        )
    return frames
