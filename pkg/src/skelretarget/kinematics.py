"""Joint-tree skeleton, axis-angle rotations and forward kinematics.

Every function that sits on an optimisation path accepts either ndarrays or
:class:`~skelretarget.autodiff.DualArray` inputs, with arbitrary leading
batch dimensions.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from . import autodiff as ad

N_JOINTS = 24
N_BETAS = 10
POSE_DIM = 3 * N_JOINTS + 3
BETA_BOUND = 5.0

SMPL_JOINT_NAMES = (
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee",
    "spine2", "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot",
    "neck", "left_collar", "right_collar", "head", "left_shoulder",
    "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist",
    "left_hand", "right_hand",
)
END_EFFECTOR_NAMES = ("left_foot", "right_foot", "left_hand", "right_hand", "head")

# below this angle the exponential map uses its series expansion
SMALL_ANGLE = 1e-3

# cross-product tensor: skew(v)[a, b] = sum_c _EPS[a, b, c] * v[c]
_EPS = np.zeros((3, 3, 3))
_EPS[0, 1, 2], _EPS[0, 2, 1] = -1.0, 1.0
_EPS[1, 0, 2], _EPS[1, 2, 0] = 1.0, -1.0
_EPS[2, 0, 1], _EPS[2, 1, 0] = -1.0, 1.0


# --------------------------------------------------------------------------
# rotations

def skew(v):
    return (v[..., None, None, :] * _EPS).sum(axis=-1)


def axis_angle_to_matrix(v):
    """Rodrigues' formula, ``(..., 3) -> (..., 3, 3)``; dual-aware."""
    v = v if ad.is_dual(v) else np.asarray(v, dtype=float)
    sq = (v * v).sum(axis=-1)
    small = ad.value(sq) < SMALL_ANGLE**2
    safe_sq = ad.where(small, 1.0, sq)
    angle = ad.sqrt(safe_sq)
    # sin(a)/a and (1 - cos a)/a^2, each with its even power series near 0
    a_exact = ad.sin(angle) / angle
    b_exact = (1.0 - ad.cos(angle)) / safe_sq
    a_series = 1.0 - sq / 6.0 + sq * sq / 120.0 - sq * sq * sq / 5040.0
    b_series = 0.5 - sq / 24.0 + sq * sq / 720.0 - sq * sq * sq / 40320.0
    a = ad.where(small, a_series, a_exact)
    b = ad.where(small, b_series, b_exact)
    K = skew(v)
    return np.eye(3) + a[..., None, None] * K + b[..., None, None] * (K @ K)


def matrix_to_axis_angle(R) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    flat = R.reshape(-1, 3, 3)
    out = Rotation.from_matrix(flat).as_rotvec()
    return out.reshape(R.shape[:-2] + (3,))


def canonical_axis_angle(v) -> np.ndarray:
    """Wrap rotation magnitudes into ``[0, 2*pi)``; I/O boundaries only."""
    v = np.asarray(v, dtype=float)
    angle = np.linalg.norm(v, axis=-1, keepdims=True)
    wrapped = np.mod(angle, 2.0 * np.pi)
    scale = np.divide(wrapped, angle, out=np.ones_like(angle), where=angle > 0)
    return v * scale


def rotation_error(R_hat, R_target):
    """Flattened ``R_hat @ R_target^T - I`` (9 entries per rotation)."""
    E = R_hat @ np.swapaxes(np.asarray(R_target, dtype=float), -1, -2) - np.eye(3)
    return E.reshape(E.shape[:-2] + (9,))


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float)
        if R.shape != (3, 3) or not _is_rotation(R, 1e-9):
            raise ValueError("rotation must be a proper orthonormal 3x3 matrix")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return RigidTransform(
            self.rotation @ other.rotation, self.rotation @ other.translation + self.translation
        )

    def apply(self, p) -> np.ndarray:
        return np.asarray(p) @ self.rotation.T + self.translation


def _is_rotation(R, atol):
    return np.allclose(R.T @ R, np.eye(3), atol=atol) and abs(np.linalg.det(R) - 1.0) < atol


# --------------------------------------------------------------------------
# skeleton

@dataclass(frozen=True, eq=False)
class Skeleton:
    """Joint tree with rest offsets and linear per-bone shape responses.

    ``parents[0]`` is -1 and ``parents[i] < i`` otherwise.  ``shape_basis``
    has one row of ``N_BETAS`` coefficients per joint.
    """

    names: tuple
    parents: np.ndarray
    template: np.ndarray
    shape_basis: np.ndarray
    end_effectors: tuple = ()
    name: str = "skeleton"
    version: int = 1

    def __post_init__(self):
        parents = np.asarray(self.parents, dtype=np.int64)
        template = np.asarray(self.template, dtype=float)
        n = len(parents)
        basis = np.asarray(self.shape_basis, dtype=float)
        if basis.size == 0:
            basis = np.zeros((n, N_BETAS))
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "template", template)
        object.__setattr__(self, "shape_basis", basis)
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "end_effectors", tuple(int(i) for i in self.end_effectors))

        if len(self.names) != n or template.shape != (n, 3) or basis.shape[0] != n:
            raise ValueError("names, parents, template and shape_basis disagree on joint count")
        if len(set(self.names)) != n:
            raise ValueError("joint names must be unique")
        if n == 0 or parents[0] != -1:
            raise ValueError("joint 0 must be the root (parent -1)")
        for i in range(1, n):
            if not 0 <= parents[i] < i:
                raise ValueError(f"joint {i}: parent must precede it in topological order")
        if np.any(template[0] != 0.0):
            raise ValueError("root offset must be zero")
        if np.any(np.linalg.norm(template[1:], axis=1) <= 0.0):
            raise ValueError("non-root offsets must have nonzero length")
        leaves = set(self.leaves)
        for e in self.end_effectors:
            if e not in leaves:
                raise ValueError(f"end-effector {self.names[e]} is not a leaf")

    @property
    def joint_count(self) -> int:
        return len(self.parents)

    @cached_property
    def depth(self) -> np.ndarray:
        depth = np.zeros(self.joint_count, dtype=np.int64)
        for i in range(1, self.joint_count):
            depth[i] = depth[self.parents[i]] + 1
        return depth

    @cached_property
    def leaves(self) -> tuple:
        has_child = np.zeros(self.joint_count, bool)
        has_child[self.parents[1:]] = True
        return tuple(np.flatnonzero(~has_child).tolist())

    @cached_property
    def levels(self) -> list:
        """Non-root joint indices grouped by depth, shallowest first."""
        return [np.flatnonzero(self.depth == d) for d in range(1, int(self.depth.max()) + 1)]

    @cached_property
    def ancestors(self) -> list:
        """Strict ancestors of each joint, root first."""
        out = []
        for i in range(self.joint_count):
            chain = []
            j = self.parents[i]
            while j >= 0:
                chain.append(int(j))
                j = self.parents[j]
            out.append(tuple(reversed(chain)))
        return out

    @property
    def pose_dim(self) -> int:
        return 3 * self.joint_count + 3

    def index(self, joint) -> int:
        if isinstance(joint, (int, np.integer)):
            if not 0 <= joint < self.joint_count:
                raise ValueError(f"joint index {joint} out of range")
            return int(joint)
        try:
            return self.names.index(joint)
        except ValueError:
            raise ValueError(f"unknown joint name {joint!r}") from None

    def offsets(self, beta=None) -> np.ndarray:
        if beta is None:
            return self.template.copy()
        return shape_to_offsets(self.template, self.shape_basis, beta)

    def bone_lengths(self, beta=None) -> np.ndarray:
        return np.linalg.norm(self.offsets(beta), axis=1)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "version": self.version,
            "joints": [
                {
                    "name": self.names[i],
                    "parent": None if self.parents[i] < 0 else int(self.parents[i]),
                    "offset": self.template[i].tolist(),
                    "shape_response": self.shape_basis[i].tolist(),
                }
                for i in range(self.joint_count)
            ],
            "end_effectors": [self.names[e] for e in self.end_effectors],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Skeleton":
        joints = d["joints"]
        names = [j["name"] for j in joints]
        parents = [-1 if j["parent"] is None else j["parent"] for j in joints]
        return cls(
            names=names,
            parents=parents,
            template=[j["offset"] for j in joints],
            shape_basis=[j.get("shape_response", [0.0] * N_BETAS) for j in joints],
            end_effectors=[names.index(e) for e in d.get("end_effectors", [])],
            name=d.get("name", "skeleton"),
            version=int(d.get("version", 1)),
        )

    @cached_property
    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def check_smpl24(self):
        """Reject skeletons that do not follow the 24-joint SMPL convention."""
        if self.names != SMPL_JOINT_NAMES:
            bad = [i for i, (a, b) in enumerate(zip(self.names, SMPL_JOINT_NAMES)) if a != b]
            where = f" (first mismatch at joint {bad[0]})" if bad else ""
            raise ValueError(f"skeleton does not use the 24-joint SMPL naming{where}")
        if len(self.end_effectors) != 5:
            raise ValueError("expected exactly 5 end-effectors")


def default_skeleton() -> Skeleton:
    text = resources.files("skelretarget").joinpath("data/skeleton24.json").read_text()
    sk = Skeleton.from_dict(json.loads(text))
    sk.check_smpl24()
    return sk


def chain_skeleton(lengths: Sequence[float], axis=(1.0, 0.0, 0.0)) -> Skeleton:
    """Serial chain: joint i+1 sits ``lengths[i]`` along ``axis`` from joint i."""
    axis = np.asarray(axis, dtype=float)
    template = np.vstack([np.zeros(3)] + [l * axis for l in lengths])
    n = len(template)
    return Skeleton(
        names=[f"j{i}" for i in range(n)],
        parents=[-1] + list(range(n - 1)),
        template=template,
        shape_basis=np.zeros((n, N_BETAS)),
        end_effectors=[n - 1],
        name=f"chain{n}",
    )


def validate_beta(beta) -> np.ndarray:
    beta = np.asarray(beta, dtype=float).reshape(-1)
    if beta.shape != (N_BETAS,):
        raise ValueError(f"beta must have {N_BETAS} components, got {beta.size}")
    if not np.all(np.isfinite(beta)):
        raise ValueError("beta must be finite")
    if np.any(np.abs(beta) > BETA_BOUND):
        raise ValueError(f"beta components must lie in [-{BETA_BOUND}, {BETA_BOUND}]")
    return beta


def shape_to_offsets(template, basis, beta) -> np.ndarray:
    """Scale each rest offset by ``1 + beta . b_i``."""
    beta = validate_beta(beta)
    template = np.asarray(template, dtype=float)
    scale = 1.0 + np.asarray(basis, dtype=float) @ beta
    if np.any(scale[1:] <= 0.0):
        raise ValueError("shape collapses a bone to non-positive length")
    return template * scale[:, None]


# --------------------------------------------------------------------------
# poses

@dataclass
class PoseParams:
    theta: np.ndarray  # (J, 3) axis-angle per joint
    root_translation: np.ndarray  # (3,)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float).reshape(-1, 3)
        self.root_translation = np.asarray(self.root_translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(self.theta)) and np.all(np.isfinite(self.root_translation))):
            raise ValueError("pose parameters must be finite")

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.theta.reshape(-1), self.root_translation])

    @classmethod
    def from_vector(cls, x) -> "PoseParams":
        x = np.asarray(x, dtype=float)
        return cls(x[:-3].reshape(-1, 3), x[-3:])

    @classmethod
    def zero(cls, joint_count: int = N_JOINTS) -> "PoseParams":
        return cls(np.zeros((joint_count, 3)), np.zeros(3))


class JointPoses(NamedTuple):
    rotations: object  # (..., J, 3, 3)
    positions: object  # (..., J, 3)

    def transform(self, i: int) -> RigidTransform:
        return RigidTransform(ad.value(self.rotations)[i], ad.value(self.positions)[i])


@dataclass
class Motion:
    """Pose sequence stored as stacked arrays.

    ``theta`` is ``(N, J, 3)``, ``translation`` is ``(N, 3)``.  ``beta``
    records the shape the motion was estimated or retargeted for.
    """

    theta: np.ndarray
    translation: np.ndarray
    fps: float
    beta: np.ndarray = field(default_factory=lambda: np.zeros(N_BETAS))

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        self.translation = np.asarray(self.translation, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float).reshape(-1)
        if self.theta.ndim != 3 or self.theta.shape[-1] != 3 or len(self.theta) == 0:
            raise ValueError("theta must have shape (frames, joints, 3) with at least one frame")
        if self.translation.shape != (len(self.theta), 3):
            raise ValueError("translation must have shape (frames, 3)")
        if not self.fps > 0:
            raise ValueError("fps must be positive")
        if not (np.all(np.isfinite(self.theta)) and np.all(np.isfinite(self.translation))):
            raise ValueError("motion contains non-finite values")

    def __len__(self) -> int:
        return len(self.theta)

    def __getitem__(self, k) -> PoseParams:
        return PoseParams(self.theta[k], self.translation[k])

    @property
    def frames(self) -> list:
        return [self[k] for k in range(len(self))]

    @classmethod
    def from_frames(cls, frames: Sequence[PoseParams], fps: float, beta=None) -> "Motion":
        beta = np.zeros(N_BETAS) if beta is None else beta
        return cls(
            np.stack([f.theta for f in frames]),
            np.stack([f.root_translation for f in frames]),
            fps,
            beta,
        )

    def vectors(self) -> np.ndarray:
        return np.concatenate([self.theta.reshape(len(self), -1), self.translation], axis=1)

    @classmethod
    def from_vectors(cls, x, fps, beta=None) -> "Motion":
        x = np.asarray(x, dtype=float)
        beta = np.zeros(N_BETAS) if beta is None else beta
        return cls(x[:, :-3].reshape(len(x), -1, 3), x[:, -3:], fps, beta)

    def copy(self) -> "Motion":
        return Motion(self.theta.copy(), self.translation.copy(), self.fps, self.beta.copy())


# --------------------------------------------------------------------------
# forward kinematics

def fk(skeleton: Skeleton, offsets, theta, translation) -> JointPoses:
    """World rotation and position of every joint.

    ``theta`` is ``(..., J, 3)`` and ``translation`` ``(..., 3)``; joint i's
    world transform is its parent's composed with ``[R(theta_i) | offsets_i]``.
    """
    offsets = np.asarray(offsets, dtype=float)
    if not ad.is_dual(theta):
        theta = np.asarray(theta, dtype=float)
    if not ad.is_dual(translation):
        translation = np.asarray(translation, dtype=float)
    local = axis_angle_to_matrix(theta)
    batch = theta.shape[:-2]
    J = skeleton.joint_count
    like = theta if ad.is_dual(theta) else translation
    R = ad.zeros(batch + (J, 3, 3), like=like)
    t = ad.zeros(batch + (J, 3), like=like)
    R[..., 0, :, :] = local[..., 0, :, :]
    t[..., 0, :] = translation + np.zeros(batch + (3,))
    for idx in skeleton.levels:
        par = skeleton.parents[idx]
        Rp = R[..., par, :, :]
        R[..., idx, :, :] = Rp @ local[..., idx, :, :]
        t[..., idx, :] = (Rp * offsets[idx][:, None, :]).sum(axis=-1) + t[..., par, :]
    return JointPoses(R, t)


def fk_pose(skeleton: Skeleton, offsets, pose: PoseParams) -> JointPoses:
    return fk(skeleton, offsets, pose.theta, pose.root_translation)


def motion_positions(skeleton: Skeleton, motion: Motion, beta=None) -> np.ndarray:
    """World joint positions ``(N, J, 3)`` of a whole motion."""
    beta = motion.beta if beta is None else beta
    return fk(skeleton, skeleton.offsets(beta), motion.theta, motion.translation).positions


def end_effector_frames(poses: JointPoses, skeleton: Skeleton) -> list:
    """World transforms of the end-effectors, in the skeleton's fixed order."""
    return [poses.transform(e) for e in skeleton.end_effectors]
