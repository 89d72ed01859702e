"""JSON and CSV file formats.

All writes go to a temporary file in the destination directory that is then
renamed over the target, so a crash never leaves a half-written file.
Floats are written with ``repr`` precision and read back bit-exactly.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .estimation import CameraIntrinsics, ObservationFrame
from .kinematics import N_BETAS, Motion, Skeleton, default_skeleton, fk, validate_beta
from .retarget import Constraint

MOTION_FORMAT = "skelretarget.motion"
MOTION_VERSION = 1
AXES = {"x": 0, "y": 1, "z": 2}


class FormatError(ValueError):
    """A file that does not follow its schema; names the file and field."""

    def __init__(self, path, field: str, message: str):
        self.path = str(path)
        self.field = field
        super().__init__(f"{self.path}: {field}: {message}")


class SkeletonMismatchError(FormatError):
    pass


# --------------------------------------------------------------------------
# low-level helpers

def atomic_write_text(path, text: str):
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    directory.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def dumps(obj, indent: int = 0) -> str:
    """JSON with nested containers indented and flat number lists kept on one line."""
    pad = " " * (indent + 1)
    if isinstance(obj, dict) and obj:
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + " " * indent + "}"
    if isinstance(obj, list) and obj and any(isinstance(v, (list, dict)) for v in obj):
        items = [pad + dumps(v, indent + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + " " * indent + "]"
    return json.dumps(obj, allow_nan=False)


def write_json(path, obj):
    atomic_write_text(path, dumps(obj) + "\n")


def read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(path, "<document>", f"invalid JSON ({exc})") from exc


def _floats(path, field, value, length=None) -> np.ndarray:
    if not isinstance(value, list) or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
    ):
        raise FormatError(path, field, "expected a list of numbers")
    if length is not None and len(value) != length:
        raise FormatError(path, field, f"expected {length} values, got {len(value)}")
    arr = np.array(value, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise FormatError(path, field, "non-finite value")
    return arr


def _number(path, field, value, positive=False) -> float:
    if not isinstance(value, (int, float)) or isinstance(value, bool) or not math.isfinite(value):
        raise FormatError(path, field, "expected a finite number")
    if positive and not value > 0:
        raise FormatError(path, field, "must be positive")
    return float(value)


def _require(path, d, key, where=""):
    if not isinstance(d, dict) or key not in d:
        raise FormatError(path, where + key, "missing")
    return d[key]


# --------------------------------------------------------------------------
# skeleton and shape

def load_skeleton(path) -> Skeleton:
    d = read_json(path)
    try:
        sk = Skeleton.from_dict(d)
        if sk.joint_count == 24:
            sk.check_smpl24()
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(path, "joints", str(exc)) from exc
    return sk


def save_skeleton(path, skeleton: Skeleton):
    write_json(path, skeleton.to_dict())


def load_beta(path) -> np.ndarray:
    """Shape file: ``{"beta": [...]}`` or a bare list of 10 numbers."""
    d = read_json(path)
    raw = d.get("beta") if isinstance(d, dict) else d
    beta = _floats(path, "beta", raw, N_BETAS)
    try:
        return validate_beta(beta)
    except ValueError as exc:
        raise FormatError(path, "beta", str(exc)) from exc


def save_beta(path, beta):
    write_json(path, {"format": "skelretarget.beta", "beta": np.asarray(beta, dtype=float).tolist()})


# --------------------------------------------------------------------------
# motion

def motion_to_dict(motion: Motion, skeleton: Skeleton) -> dict:
    if motion.theta.shape[1] != skeleton.joint_count:
        raise ValueError("motion joint count does not match the skeleton")
    return {
        "format": MOTION_FORMAT,
        "version": MOTION_VERSION,
        "fps": float(motion.fps),
        "skeleton": {"name": skeleton.name, "hash": skeleton.hash},
        "beta": motion.beta.tolist(),
        "frames": motion.vectors().tolist(),
    }


def motion_from_dict(d, skeleton: Skeleton, path="<motion>") -> Motion:
    if not isinstance(d, dict):
        raise FormatError(path, "<document>", "expected an object")
    if d.get("format") != MOTION_FORMAT:
        raise FormatError(path, "format", f"expected {MOTION_FORMAT!r}")
    if d.get("version") != MOTION_VERSION:
        raise FormatError(path, "version", f"unsupported version {d.get('version')!r}")
    ref = _require(path, d, "skeleton")
    h = _require(path, ref, "hash", "skeleton.")
    if h != skeleton.hash:
        raise SkeletonMismatchError(
            path, "skeleton.hash", f"motion was saved for skeleton {h}, loaded skeleton is {skeleton.hash}"
        )
    fps = _number(path, "fps", _require(path, d, "fps"), positive=True)
    beta = _floats(path, "beta", _require(path, d, "beta"), N_BETAS)
    frames = _require(path, d, "frames")
    if not isinstance(frames, list) or not frames:
        raise FormatError(path, "frames", "expected a non-empty list")
    width = skeleton.pose_dim
    rows = [_floats(path, f"frames[{k}]", f, width) for k, f in enumerate(frames)]
    return Motion.from_vectors(np.stack(rows), fps, beta)


def save_motion(path, motion: Motion, skeleton: Optional[Skeleton] = None):
    write_json(path, motion_to_dict(motion, skeleton or default_skeleton()))


def load_motion(path, skeleton: Optional[Skeleton] = None) -> Motion:
    return motion_from_dict(read_json(path), skeleton or default_skeleton(), path)


# --------------------------------------------------------------------------
# constraints

def constraints_to_list(constraints: Sequence[Constraint], skeleton: Skeleton) -> list:
    out = []
    for c in constraints:
        item = {
            "frame": c.frame,
            "joint": skeleton.names[c.joint],
            "position": c.target_position.tolist(),
            "tolerance": c.tolerance,
        }
        if c.target_orientation is not None:
            item["orientation"] = c.target_orientation.reshape(-1).tolist()
        if c.weight is not None:
            item["weight"] = c.weight
        out.append(item)
    return out


def save_constraints(path, constraints: Sequence[Constraint], skeleton: Optional[Skeleton] = None):
    write_json(path, constraints_to_list(constraints, skeleton or default_skeleton()))


def load_constraints(path, skeleton: Optional[Skeleton] = None) -> list:
    """Constraint list; joints may be given by name or index."""
    skeleton = skeleton or default_skeleton()
    d = read_json(path)
    items = d.get("constraints") if isinstance(d, dict) else d
    if not isinstance(items, list):
        raise FormatError(path, "constraints", "expected a list")
    out = []
    for i, item in enumerate(items):
        where = f"[{i}]."
        frame = _require(path, item, "frame", where)
        if not isinstance(frame, int) or isinstance(frame, bool):
            raise FormatError(path, where + "frame", "expected an integer")
        joint = _require(path, item, "joint", where)
        try:
            joint = skeleton.index(joint)
        except (KeyError, IndexError, ValueError, TypeError) as exc:
            raise FormatError(path, where + "joint", f"unknown joint {joint!r}") from exc
        pos = _floats(path, where + "position", _require(path, item, "position", where), 3)
        R = item.get("orientation")
        if R is not None:
            R = _floats(path, where + "orientation", R, 9).reshape(3, 3)
        try:
            out.append(
                Constraint(
                    frame,
                    joint,
                    pos,
                    R,
                    tolerance=_number(path, where + "tolerance", item.get("tolerance", 0.005)),
                    weight=None if item.get("weight") is None else _number(path, where + "weight", item["weight"]),
                )
            )
        except ValueError as exc:
            raise FormatError(path, f"[{i}]", str(exc)) from exc
    return out


# --------------------------------------------------------------------------
# observations

def load_observations(path, joint_count: int = 24):
    """Returns ``(frames, CameraIntrinsics, fps)``.

    The camera comes from ``intrinsics`` when present, otherwise from
    ``image_size`` via :meth:`CameraIntrinsics.default_for_image`.
    """
    d = read_json(path)
    if not isinstance(d, dict):
        raise FormatError(path, "<document>", "expected an object")
    if "intrinsics" in d and d["intrinsics"] is not None:
        k = d["intrinsics"]
        try:
            K = CameraIntrinsics(*(_number(path, f"intrinsics.{n}", _require(path, k, n, "intrinsics."))
                                   for n in ("fx", "fy", "cx", "cy")))
        except ValueError as exc:
            if isinstance(exc, FormatError):
                raise
            raise FormatError(path, "intrinsics", str(exc)) from exc
    else:
        w, h = _floats(path, "image_size", _require(path, d, "image_size"), 2)
        K = CameraIntrinsics.default_for_image(w, h)
    fps = _number(path, "fps", d.get("fps", 30.0), positive=True)
    frames_raw = _require(path, d, "frames")
    if not isinstance(frames_raw, list) or not frames_raw:
        raise FormatError(path, "frames", "expected a non-empty list")
    frames = []
    for k, f in enumerate(frames_raw):
        where = f"frames[{k}]."
        kp = _require(path, f, "keypoints", where)
        if not isinstance(kp, list) or len(kp) != joint_count:
            raise FormatError(path, where + "keypoints", f"expected {joint_count} (u, v, confidence) triples")
        kp = np.stack([_floats(path, f"{where}keypoints[{j}]", p, 3) for j, p in enumerate(kp)])
        theta = _floats(path, where + "theta_init", _require(path, f, "theta_init", where), 3 * joint_count)
        beta = _floats(path, where + "beta_init", _require(path, f, "beta_init", where), N_BETAS)
        t0 = f.get("translation_init")
        t0 = None if t0 is None else _floats(path, where + "translation_init", t0, 3)
        scale = f.get("scale")
        scale = None if scale is None else _number(path, where + "scale", scale, positive=True)
        try:
            frames.append(ObservationFrame(kp[:, :2], kp[:, 2], theta.reshape(-1, 3), beta, t0, scale))
        except ValueError as exc:
            raise FormatError(path, f"frames[{k}]", str(exc)) from exc
    return frames, K, fps


def save_observations(path, frames: Sequence[ObservationFrame], K: CameraIntrinsics, fps=30.0, image_size=None):
    out = []
    for f in frames:
        item = {
            "keypoints": np.column_stack([f.joints_2d, f.confidence]).tolist(),
            "theta_init": f.theta_init.reshape(-1).tolist(),
            "beta_init": f.beta_init.tolist(),
        }
        if f.translation_init is not None:
            item["translation_init"] = f.translation_init.tolist()
        if f.scale is not None:
            item["scale"] = f.scale
        out.append(item)
    doc = {
        "format": "skelretarget.observations",
        "fps": float(fps),
        "intrinsics": {"fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy},
        "frames": out,
    }
    if image_size is not None:
        doc["image_size"] = [float(v) for v in image_size]
    write_json(path, doc)


# --------------------------------------------------------------------------
# CSV

def trajectory(motion: Motion, skeleton: Skeleton, joint, axis: str, beta=None) -> np.ndarray:
    if axis not in AXES:
        raise ValueError(f"axis must be one of x, y, z, got {axis!r}")
    try:
        j = skeleton.index(joint)
    except (KeyError, IndexError, ValueError) as exc:
        raise ValueError(f"unknown joint {joint!r}") from exc
    beta = motion.beta if beta is None else beta
    P = fk(skeleton, skeleton.offsets(beta), motion.theta, motion.translation).positions
    return P[:, j, AXES[axis]]


def export_trajectory_csv(motion: Motion, skeleton: Skeleton, joint, axis: str, path, beta=None):
    """One ``frame,value`` row per frame: world coordinate of ``joint`` in metres."""
    values = trajectory(motion, skeleton, joint, axis, beta)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["frame", "value"])
    for k, v in enumerate(values):
        w.writerow([k, repr(float(v))])
    atomic_write_text(path, buf.getvalue())
    return values


def read_trajectory_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return np.array([float(r["value"]) for r in rows])
