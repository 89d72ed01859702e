"""Space-time retargeting of a motion onto a differently proportioned skeleton.

Each temporal window solves for pose offsets ``e = theta_target - theta_source``
minimising

    a1^2/2 |C_P|^2_{W_P} + a2^2/2 |C_R|^2_{W_R} + a3^2/2 |e|^2_W

where C_P compares frame-to-frame joint displacements of target and source
(motion style), C_R are constraint errors and the last term keeps the pose
close to the source.  Offsets cover joint angles and, unless disabled, the
root translation.
"""

from __future__ import annotations

import dataclasses
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse

from . import autodiff as ad
from .kinematics import Motion, Skeleton, default_skeleton, fk, rotation_error
from .solver import ConvergenceWarning, ResidualProblem, SolveReport, solve_nlsq

log = logging.getLogger(__name__)


@dataclass
class Constraint:
    frame: int
    joint: int
    target_position: np.ndarray
    target_orientation: Optional[np.ndarray] = None
    tolerance: float = 0.005
    weight: Optional[float] = None  # overrides WeightConfig.w_constr

    def __post_init__(self):
        self.frame = int(self.frame)
        self.joint = int(self.joint)
        self.target_position = np.asarray(self.target_position, dtype=float).reshape(3)
        if self.target_orientation is not None:
            R = np.asarray(self.target_orientation, dtype=float).reshape(3, 3)
            if not (np.allclose(R @ R.T, np.eye(3), atol=1e-6) and np.linalg.det(R) > 0):
                raise ValueError("constraint orientation must be a rotation matrix")
            self.target_orientation = R
        if self.frame < 0 or self.joint < 0:
            raise ValueError("constraint frame and joint must be nonnegative")
        if not self.tolerance > 0:
            raise ValueError("constraint tolerance must be positive")
        if self.weight is not None and not self.weight > 0:
            raise ValueError("constraint weight must be positive")

    @property
    def residual_size(self) -> int:
        return 3 if self.target_orientation is None else 12


@dataclass
class WeightConfig:
    """Diagonal weights of the prediction, constraint and regularisation terms."""

    w_pred: np.ndarray  # per joint
    w_reg: np.ndarray  # per joint
    w_constr: object = 1.0  # scalar or one per constraint
    decay_rho: float = 1.0

    def __post_init__(self):
        self.w_pred = np.asarray(self.w_pred, dtype=float)
        self.w_reg = np.asarray(self.w_reg, dtype=float)
        if np.any(self.w_pred <= 0) or np.any(self.w_reg <= 0) or np.any(np.asarray(self.w_constr) <= 0):
            raise ValueError("all weights must be positive")

    def constraint_weights(self, constraints: Sequence[Constraint]) -> np.ndarray:
        """Diagonal of the constraint weight matrix, one entry per constraint."""
        w = np.array(np.broadcast_to(np.asarray(self.w_constr, dtype=float), (len(constraints),)))
        for i, c in enumerate(constraints):
            if c.weight is not None:
                w[i] = c.weight
        return w

    def check_root_proximal(self, skeleton: Skeleton):
        """Raise unless shallower joints never weigh less than deeper ones."""
        d = skeleton.depth
        for w, label in ((self.w_pred, "w_pred"), (self.w_reg, "w_reg")):
            shallow = d[:, None] < d[None, :]
            if np.any(shallow & (w[:, None] < w[None, :])):
                raise ValueError(f"{label} is not root-proximal")


def default_weights(skeleton: Skeleton, rho: float = 0.9) -> WeightConfig:
    """Geometric decay ``rho ** depth`` for prediction and regularisation weights."""
    if not 0.0 < rho <= 1.0:
        raise ValueError("rho must lie in (0, 1]")
    w = rho ** skeleton.depth.astype(float)
    return WeightConfig(w.copy(), w.copy(), 1.0, rho)


@dataclass
class RetargetConfig:
    window_seconds: float = 2.0
    alpha1: float = 10.0
    alpha2: float = 5.0
    alpha3: float = 1.0
    overlap_frames: Optional[int] = None  # default: a quarter window
    max_iters: int = 50
    tol: float = 1e-10
    optimize_root_translation: bool = True
    parallel: bool = False

    def __post_init__(self):
        if not self.window_seconds > 0:
            raise ValueError("window_seconds must be positive")
        if min(self.alpha1, self.alpha2, self.alpha3) < 0:
            raise ValueError("alphas must be nonnegative")

    def window_length(self, fps: float) -> int:
        n = int(round(self.window_seconds * fps))
        if n < 2:
            raise ValueError(f"window of {self.window_seconds}s at {fps} fps is shorter than 2 frames")
        return n

    def overlap(self, n: int) -> int:
        ov = n // 4 if self.overlap_frames is None else int(self.overlap_frames)
        if not 0 <= ov < n:
            raise ValueError("overlap_frames must satisfy 0 <= overlap < window length")
        return ov


@dataclass
class RetargetResult:
    motion: Motion
    per_window_cost: list
    constraint_report: list  # achieved position error per constraint, metres
    reports: list = field(default_factory=list)
    windows: list = field(default_factory=list)  # (start, stop) frame ranges

    @property
    def converged(self) -> bool:
        return all(r.status != "max_iters" for r in self.reports)


# --------------------------------------------------------------------------
# residual blocks

def prediction_residual(skeleton: Skeleton, offsets_t, offsets_s, theta_t, trans_t, theta_s, trans_s):
    """Per-joint difference of frame-to-frame displacement, target minus source.

    Inputs are windows of at least two consecutive frames; the result has
    ``3 * J * (n - 1)`` entries.
    """
    if len(ad.value(theta_t)) < 2 or len(np.asarray(theta_s)) < 2:
        raise ValueError("prediction residual needs a window of at least 2 frames")
    P_t = fk(skeleton, offsets_t, theta_t, trans_t).positions
    P_s = fk(skeleton, offsets_s, theta_s, trans_s).positions
    return _displacement_gap(P_t, P_s).reshape(-1)


def _displacement_gap(P_t, P_s):
    return (P_t[1:] - P_t[:-1]) - (P_s[1:] - P_s[:-1])


def constraint_residual(skeleton: Skeleton, offsets_t, theta_k, trans_k, constraints: Sequence[Constraint]):
    """Stacked constraint errors at one frame (position, then orientation if set)."""
    pose = fk(skeleton, offsets_t, theta_k, trans_k)
    return _constraint_blocks(pose.positions, pose.rotations, constraints, [0] * len(constraints))


def _constraint_blocks(P, R, constraints, local_frames, weights=None):
    blocks = []
    for i, (c, f) in enumerate(zip(constraints, local_frames)):
        w = 1.0 if weights is None else weights[i]
        idx = (f, c.joint) if P.ndim == 3 else (c.joint,)
        blocks.append((P[idx] - c.target_position) * w)
        if c.target_orientation is not None:
            blocks.append(rotation_error(R[idx], c.target_orientation) * w)
    if not blocks:
        return np.zeros(0)
    return ad.concatenate(blocks)


# --------------------------------------------------------------------------
# one window

def _pose_columns(skeleton: Skeleton, nv: int):
    """Per joint: variable columns (within a frame) its position / rotation depend on."""
    tcols = [3 * skeleton.joint_count + a for a in range(3)] if nv > 3 * skeleton.joint_count else []
    pos, rot = [], []
    for j in range(skeleton.joint_count):
        anc = [3 * a + c for a in skeleton.ancestors[j] for c in range(3)]
        pos.append(np.array(anc + tcols, dtype=np.int64))
        rot.append(np.array(anc + [3 * j + c for c in range(3)], dtype=np.int64))
    return pos, rot


class _WindowProblem:
    def __init__(self, skeleton, offsets_t, offsets_s, theta_s, trans_s, constraints, local_frames,
                 weights: WeightConfig, cfg: RetargetConfig, e_fixed, anchor):
        self.sk = skeleton
        self.off_t = offsets_t
        J = skeleton.joint_count
        self.J = J
        self.m = len(theta_s)
        self.nv = 3 * J + 3 if cfg.optimize_root_translation else 3 * J
        self.theta_s = theta_s
        self.trans_s = trans_s
        self.e_fixed = e_fixed  # (m, 3): translation offsets when not optimised
        self.constraints = constraints
        self.local = local_frames
        self.anchor = anchor  # (theta_source, trans_source, theta_target, trans_target) or None

        P_s = fk(skeleton, offsets_s, theta_s, trans_s).positions
        if anchor is not None:
            P_as = fk(skeleton, offsets_s, anchor[0], anchor[1]).positions
            P_s = np.concatenate([P_as[None], P_s])
            self.P_anchor = fk(skeleton, offsets_t, anchor[2], anchor[3]).positions[None]
        self.D_s = P_s[1:] - P_s[:-1]
        self.n_pairs = len(self.D_s)

        self.w_pred = (cfg.alpha1 / np.sqrt(2.0)) * np.sqrt(weights.w_pred)[:, None]
        self.w_con = (cfg.alpha2 / np.sqrt(2.0)) * np.sqrt(weights.constraint_weights(constraints))
        w_var = np.concatenate([np.repeat(weights.w_reg, 3), np.full(3, weights.w_reg[0])])[: self.nv]
        self.w_reg = (cfg.alpha3 / np.sqrt(2.0)) * np.sqrt(np.tile(w_var, self.m))

        self.n_pred = 3 * J * self.n_pairs
        self.n_con = sum(c.residual_size for c in constraints)
        self.dimension = self.m * self.nv
        self.residual_count = self.n_pred + self.n_con + self.dimension

    def offsets(self, x):
        e = x.reshape(self.m, self.nv)
        if self.nv == 3 * self.J:
            e = ad.concatenate([e, self.e_fixed], axis=-1)
        return e

    def target_pose(self, x):
        e = self.offsets(x)
        theta = self.theta_s + e[:, : 3 * self.J].reshape(self.m, self.J, 3)
        trans = self.trans_s + e[:, 3 * self.J :]
        return theta, trans

    def evaluate(self, x):
        theta, trans = self.target_pose(x)
        pose = fk(self.sk, self.off_t, theta, trans)
        P = pose.positions
        parts = []
        if self.n_pairs:
            P_all = ad.concatenate([self.P_anchor, P], axis=-3) if self.anchor is not None else P
            gap = (P_all[1:] - P_all[:-1]) - self.D_s
            parts.append((gap * self.w_pred).reshape(-1))
        if self.constraints:
            parts.append(_constraint_blocks(P, pose.rotations, self.constraints, self.local, self.w_con))
        parts.append(x * self.w_reg)
        return ad.concatenate(parts)

    def sparsity(self):
        pos, rot = _pose_columns(self.sk, self.nv)
        rows, cols = [], []
        row = 0
        shift = 0 if self.anchor is None else -1
        for p in range(self.n_pairs):
            frames = [f for f in (p + shift, p + shift + 1) if f >= 0]
            for j in range(self.J):
                dep = np.concatenate([f * self.nv + pos[j] for f in frames])
                for a in range(3):
                    rows.append(np.full(dep.size, row))
                    cols.append(dep)
                    row += 1
        for c, f in zip(self.constraints, self.local):
            for a in range(3):
                rows.append(np.full(pos[c.joint].size, row))
                cols.append(f * self.nv + pos[c.joint])
                row += 1
            if c.target_orientation is not None:
                for a in range(9):
                    rows.append(np.full(rot[c.joint].size, row))
                    cols.append(f * self.nv + rot[c.joint])
                    row += 1
        rows.append(row + np.arange(self.dimension))
        cols.append(np.arange(self.dimension))
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        pattern = scipy.sparse.coo_matrix(
            (np.ones(rows.size, dtype=bool), (rows, cols)), shape=(self.residual_count, self.dimension)
        )
        frame = np.arange(self.dimension) // self.nv
        colors = (frame % 2) * self.nv + np.arange(self.dimension) % self.nv
        return pattern, colors

    def problem(self) -> ResidualProblem:
        pattern, colors = self.sparsity()
        return ResidualProblem(self.dimension, self.residual_count, self.evaluate, pattern, colors)


def window_problem(
    skeleton: Skeleton,
    source: Motion,
    beta_t,
    beta_s,
    constraints: Sequence[Constraint],
    weights: WeightConfig,
    cfg: RetargetConfig,
    e_init=None,
    anchor=None,
):
    """Build the window cost as a sparse residual problem.

    ``constraints`` carry frame indices local to the window.  ``anchor`` is
    an optional ``(source_pose_vector, target_pose_vector)`` for the frame
    right before the window; it is held fixed and links this window's
    displacements to the previous solution.  Returns ``(problem, x0, wp)``.
    """
    J = skeleton.joint_count
    m = len(source)
    e_init = np.zeros((m, 3 * J + 3)) if e_init is None else np.asarray(e_init, dtype=float)
    if e_init.shape != (m, 3 * J + 3):
        raise ValueError("e_init must have one pose vector per window frame")
    for c in constraints:
        if not 0 <= c.frame < m:
            raise ValueError(f"constraint frame {c.frame} outside window of {m} frames")
        if c.joint >= J:
            raise ValueError(f"constraint joint {c.joint} does not exist")
    anc = None
    if anchor is not None:
        src, tgt = (np.asarray(a, dtype=float) for a in anchor)
        anc = (src[:-3].reshape(J, 3), src[-3:], tgt[:-3].reshape(J, 3), tgt[-3:])
    wp = _WindowProblem(
        skeleton,
        skeleton.offsets(beta_t),
        skeleton.offsets(beta_s),
        source.theta,
        source.translation,
        list(constraints),
        [c.frame for c in constraints],
        weights,
        cfg,
        e_init[:, 3 * J :],
        anc,
    )
    x0 = e_init[:, : wp.nv].reshape(-1).copy()
    return wp.problem(), x0, wp


def solve_window(
    skeleton: Skeleton,
    source: Motion,
    beta_t,
    beta_s,
    constraints: Sequence[Constraint],
    weights: WeightConfig,
    cfg: RetargetConfig,
    e_init=None,
    anchor=None,
):
    """Solve one window; returns ``(target Motion for the window, SolveReport)``."""
    problem, x0, wp = window_problem(skeleton, source, beta_t, beta_s, constraints, weights, cfg, e_init, anchor)
    x, report = solve_nlsq(problem, x0, max_iters=cfg.max_iters, tol=cfg.tol)
    if report.status == "max_iters":
        warnings.warn(f"retarget window hit max_iters ({cfg.max_iters})", ConvergenceWarning)
    theta, trans = wp.target_pose(x)
    return Motion(theta, trans, source.fps, np.asarray(beta_t, dtype=float)), report


# --------------------------------------------------------------------------
# whole motion

def window_ranges(n_frames: int, n: int, overlap: int) -> list:
    ranges = []
    start = 0
    while True:
        stop = min(start + n, n_frames)
        ranges.append((start, stop))
        if stop == n_frames:
            return ranges
        start = stop - overlap


def _slice(motion: Motion, a: int, b: int) -> Motion:
    return Motion(motion.theta[a:b], motion.translation[a:b], motion.fps, motion.beta)


def retarget_motion(
    source: Motion,
    beta_t,
    beta_s=None,
    constraints: Sequence[Constraint] = (),
    weights: Optional[WeightConfig] = None,
    cfg: RetargetConfig = RetargetConfig(),
    skeleton: Optional[Skeleton] = None,
) -> RetargetResult:
    """Retarget ``source`` window by window.

    Windows of ``round(window_seconds * fps)`` frames share
    ``overlap_frames`` with their predecessor.  Overlapped frames are
    warm-started from, and then overwritten by, the later window; frames new
    to a window start from the last solved offset.  The frame preceding each
    window stays fixed as a continuity anchor.
    """
    skeleton = skeleton or default_skeleton()
    beta_s = source.beta if beta_s is None else np.asarray(beta_s, dtype=float)
    beta_t = np.asarray(beta_t, dtype=float)
    weights = weights or default_weights(skeleton)
    weights.check_root_proximal(skeleton)
    N = len(source)
    for c in constraints:
        if not 0 <= c.frame < N:
            raise ValueError(f"constraint frame {c.frame} outside motion of {N} frames")
        if c.joint >= skeleton.joint_count:
            raise ValueError(f"constraint joint {c.joint} does not exist")

    w_con = weights.constraint_weights(constraints)
    n = min(cfg.window_length(source.fps), N)
    overlap = 0 if cfg.parallel else cfg.overlap(cfg.window_length(source.fps))
    overlap = min(overlap, n - 1)
    ranges = window_ranges(N, n, overlap)
    src_vec = source.vectors()
    e = np.zeros_like(src_vec)
    out = src_vec.copy()
    reports = [None] * len(ranges)

    def local_constraints(a, b):
        return [
            dataclasses.replace(c, frame=c.frame - a, weight=w_con[i])
            for i, c in enumerate(constraints)
            if a <= c.frame < b
        ]

    def solve(w, e_init, anchor):
        a, b = ranges[w]
        local = local_constraints(a, b)
        return solve_window(skeleton, _slice(source, a, b), beta_t, beta_s, local, weights, cfg, e_init, anchor)

    if cfg.parallel:
        with ThreadPoolExecutor() as pool:
            results = list(pool.map(lambda w: solve(w, None, None), range(len(ranges))))
        for w, (res, rep) in enumerate(results):
            a, b = ranges[w]
            out[a:b] = res.vectors()
            reports[w] = rep
    else:
        solved_until = 0
        for w, (a, b) in enumerate(ranges):
            e_init = e[a:b].copy()
            if solved_until > a:
                e_init[solved_until - a :] = e[solved_until - 1]
            anchor = (src_vec[a - 1], out[a - 1]) if a > 0 else None
            res, rep = solve(w, e_init, anchor)
            out[a:b] = res.vectors()
            e[a:b] = out[a:b] - src_vec[a:b]
            solved_until = b
            reports[w] = rep
            log.debug("window %d [%d, %d): %s, cost %.3g", w, a, b, rep.status, rep.final_cost)

    motion = Motion.from_vectors(out, source.fps, beta_t)
    P = fk(skeleton, skeleton.offsets(beta_t), motion.theta, motion.translation).positions
    errors = [float(np.linalg.norm(P[c.frame, c.joint] - c.target_position)) for c in constraints]
    return RetargetResult(motion, [r.final_cost for r in reports], errors, reports, ranges)
