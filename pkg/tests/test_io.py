import json
import os
from importlib import resources

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from skelretarget import io, synthetic
from skelretarget.estimation import CameraIntrinsics
from skelretarget.kinematics import Motion, chain_skeleton, motion_positions
from skelretarget.retarget import Constraint


def sample_path():
    return resources.files("skelretarget").joinpath("data/sample_motion.json")


def test_motion_round_trip_is_exact(skeleton, tmp_path, rng):
    m = Motion(rng.normal(size=(7, 24, 3)), rng.normal(size=(7, 3)), 24.0, rng.normal(size=10))
    io.save_motion(tmp_path / "m.json", m, skeleton)
    back = io.load_motion(tmp_path / "m.json", skeleton)
    assert np.array_equal(back.vectors(), m.vectors()) and np.array_equal(back.beta, m.beta)
    assert back.fps == 24.0


@given(arrays(float, (2, 75), elements=st.floats(-1e6, 1e6, allow_subnormal=True)))
def test_motion_dict_round_trip(skeleton, x):
    m = Motion.from_vectors(x, 30.0)
    d = json.loads(io.dumps(io.motion_to_dict(m, skeleton)))
    assert np.array_equal(io.motion_from_dict(d, skeleton).vectors(), m.vectors())


def test_short_frame_names_index(skeleton):
    d = io.motion_to_dict(synthetic.sine_motion(skeleton, 4), skeleton)
    d["frames"][2] = d["frames"][2][:74]
    with pytest.raises(io.FormatError, match=r"frames\[2\].*75"):
        io.motion_from_dict(d, skeleton, "clip.json")


@pytest.mark.parametrize(
    "edit, field",
    [
        (lambda d: d.update(format="other"), "format"),
        (lambda d: d.update(version=9), "version"),
        (lambda d: d.update(fps=0), "fps"),
        (lambda d: d.update(frames=[]), "frames"),
        (lambda d: d["frames"][0].__setitem__(3, "x"), r"frames\[0\]"),
        (lambda d: d.pop("beta"), "beta"),
    ],
)
def test_motion_validation(skeleton, edit, field):
    d = io.motion_to_dict(synthetic.sine_motion(skeleton, 2), skeleton)
    edit(d)
    with pytest.raises(io.FormatError, match=field):
        io.motion_from_dict(d, skeleton)


def test_invalid_json_is_format_error(tmp_path):
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(io.FormatError, match="invalid JSON"):
        io.read_json(tmp_path / "bad.json")


def test_skeleton_hash_mismatch(skeleton, tmp_path):
    chain = chain_skeleton([1.0] * 23)
    io.save_motion(tmp_path / "m.json", synthetic.sine_motion(skeleton, 2), skeleton)
    with pytest.raises(io.SkeletonMismatchError):
        io.load_motion(tmp_path / "m.json", chain)


def test_skeleton_round_trip(skeleton, tmp_path):
    io.save_skeleton(tmp_path / "s.json", skeleton)
    assert io.load_skeleton(tmp_path / "s.json").hash == skeleton.hash
    d = skeleton.to_dict()
    d["joints"][3]["parent"] = 7
    (tmp_path / "bad.json").write_text(json.dumps(d))
    with pytest.raises(io.FormatError):
        io.load_skeleton(tmp_path / "bad.json")


def test_beta_files(tmp_path, rng):
    b = rng.normal(size=10)
    io.save_beta(tmp_path / "b.json", b)
    assert np.array_equal(io.load_beta(tmp_path / "b.json"), b)
    (tmp_path / "bare.json").write_text(json.dumps(b.tolist()))
    assert np.array_equal(io.load_beta(tmp_path / "bare.json"), b)
    (tmp_path / "short.json").write_text("[1, 2]")
    with pytest.raises(io.FormatError, match="beta"):
        io.load_beta(tmp_path / "short.json")


def test_constraint_round_trip(skeleton, tmp_path):
    cs = [
        Constraint(3, 22, [0.1, 0.2, 0.3]),
        Constraint(5, 10, [0.0, 0.0, 1.0], target_orientation=np.eye(3), tolerance=0.01, weight=2.0),
    ]
    io.save_constraints(tmp_path / "c.json", cs, skeleton)
    back = io.load_constraints(tmp_path / "c.json", skeleton)
    assert [(c.frame, c.joint, c.tolerance, c.weight) for c in back] == [(3, 22, 0.005, None), (5, 10, 0.01, 2.0)]
    np.testing.assert_array_equal(back[1].target_orientation, np.eye(3))
    assert back[0].target_orientation is None


def test_constraint_joint_names_and_errors(skeleton, tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"constraints": [{"frame": 1, "joint": "left_hand",
                                                                  "position": [0, 1, 0]}]}))
    assert io.load_constraints(tmp_path / "c.json", skeleton)[0].joint == 22
    (tmp_path / "bad.json").write_text(json.dumps([{"frame": 1, "joint": "tail", "position": [0, 1, 0]}]))
    with pytest.raises(io.FormatError, match="tail"):
        io.load_constraints(tmp_path / "bad.json", skeleton)


def test_observation_round_trip(skeleton, tmp_path):
    K = CameraIntrinsics(1000.0, 1010.0, 640.0, 360.0)
    obs = synthetic.synthetic_observations(skeleton, synthetic.camera_clip(skeleton, 3), K, seed=2,
                                           with_translation=True)
    io.save_observations(tmp_path / "o.json", obs, K, fps=25.0)
    back, K2, fps = io.load_observations(tmp_path / "o.json")
    assert K2 == K and fps == 25.0 and len(back) == 3
    for a, b in zip(obs, back):
        assert np.array_equal(a.joints_2d, b.joints_2d) and np.array_equal(a.confidence, b.confidence)
        assert np.array_equal(a.theta_init, b.theta_init) and np.array_equal(a.translation_init, b.translation_init)


def test_observation_camera_from_image_size(skeleton, tmp_path):
    K = CameraIntrinsics.default_for_image(640, 480)
    obs = synthetic.synthetic_observations(skeleton, synthetic.camera_clip(skeleton, 1), K, seed=2)
    io.save_observations(tmp_path / "o.json", obs, K, image_size=(640, 480))
    d = json.loads((tmp_path / "o.json").read_text())
    del d["intrinsics"]
    d["frames"][0]["keypoints"] = d["frames"][0]["keypoints"][:5]
    (tmp_path / "o.json").write_text(json.dumps(d))
    with pytest.raises(io.FormatError, match=r"frames\[0\]\.keypoints"):
        io.load_observations(tmp_path / "o.json")


def test_sample_motion_documented_values(skeleton):
    m = io.load_motion(sample_path(), skeleton)
    assert len(m) == 3 and m.fps == 30.0
    np.testing.assert_array_equal(m.beta, [0.5] + [0.0] * 9)
    np.testing.assert_array_equal(m.theta[:, 18, 1], [0.0, -0.25, -0.5])
    mask = np.ones((24, 3), dtype=bool)
    mask[18, 1] = False
    assert np.all(m.theta[:, mask] == 0.0)
    np.testing.assert_array_equal(m.translation, [[0, 0.9, 0], [0, 0.9, 0.5], [0, 0.9, 1.0]])


def test_csv_constant_and_ramp(skeleton, tmp_path):
    theta = np.zeros((4, 24, 3))
    trans = np.column_stack([np.zeros(4), np.full(4, 0.9), 0.25 * np.arange(4)])
    m = Motion(theta, trans, 30.0)
    io.export_trajectory_csv(m, skeleton, "pelvis", "z", tmp_path / "z.csv")
    text = (tmp_path / "z.csv").read_text().splitlines()
    assert text[0] == "frame,value" and text[1] == "0,0.0" and text[4] == "3,0.75"
    io.export_trajectory_csv(m, skeleton, 0, "y", tmp_path / "y.csv")
    np.testing.assert_array_equal(io.read_trajectory_csv(tmp_path / "y.csv"), 0.9)
    with pytest.raises(ValueError):
        io.trajectory(m, skeleton, "pelvis", "w")
    with pytest.raises(ValueError):
        io.trajectory(m, skeleton, "tail", "x")


def test_csv_box_curve_meets_constraint_heights(skeleton, tmp_path):
    from skelretarget.retarget import retarget_motion

    src, beta_s, beta_t, cons = synthetic.pick_up_box(skeleton)
    res = retarget_motion(src, beta_t, beta_s, cons, skeleton=skeleton)
    y = io.export_trajectory_csv(res.motion, skeleton, "left_hand", "y", tmp_path / "lh.csv")
    back = io.read_trajectory_csv(tmp_path / "lh.csv")
    assert np.array_equal(back, y)
    for c in cons:
        if c.joint == skeleton.index("left_hand"):
            assert abs(back[c.frame] - c.target_position[1]) < c.tolerance
    P = motion_positions(skeleton, res.motion)
    assert np.array_equal(back, P[:, 22, 1])


def test_atomic_write_leaves_no_temp_files(tmp_path):
    io.atomic_write_text(tmp_path / "a.txt", "one")
    io.atomic_write_text(tmp_path / "a.txt", "two")
    assert (tmp_path / "a.txt").read_text() == "two"
    assert os.listdir(tmp_path) == ["a.txt"]


def test_atomic_write_failure_keeps_old_file(tmp_path):
    io.atomic_write_text(tmp_path / "a.json", "old")
    with pytest.raises(TypeError):
        io.write_json(tmp_path / "a.json", {"x": object()})
    assert (tmp_path / "a.json").read_text() == "old"
    assert os.listdir(tmp_path) == ["a.json"]


def test_dumps_layout():
    text = io.dumps({"a": [1.0, 2.0], "b": {"c": [[1, 2], [3, 4]]}}, indent=1)
    assert json.loads(text) == {"a": [1.0, 2.0], "b": {"c": [[1, 2], [3, 4]]}}
    assert '"a": [1.0, 2.0]' in text
