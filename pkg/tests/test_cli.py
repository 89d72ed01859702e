import json

import numpy as np
import pytest

from skelretarget import io, synthetic
from skelretarget.cli import EXIT_INVALID, EXIT_NOT_CONVERGED, EXIT_OK, main
from skelretarget.estimation import CameraIntrinsics
from skelretarget.kinematics import chain_skeleton


@pytest.fixture
def files(skeleton, tmp_path):
    m = synthetic.sine_motion(skeleton, 8, seed=2)
    io.save_motion(tmp_path / "src.json", m, skeleton)
    beta = np.zeros(10)
    beta[synthetic.ARM_BETA] = 0.8
    io.save_beta(tmp_path / "beta.json", beta)
    return tmp_path


def test_export_csv(files):
    assert main(["export-csv", "--in", str(files / "src.json"), "--joint", "left_hand", "--axis", "z",
                 "--out", str(files / "lh.csv")]) == EXIT_OK
    assert len(io.read_trajectory_csv(files / "lh.csv")) == 8


def test_retarget_and_metrics(files, capsys):
    cons = [{"frame": 3, "joint": "left_hand", "position": [0.3, 1.0, 0.4]}]
    (files / "c.json").write_text(json.dumps(cons))
    rc = main(["retarget", "--source", str(files / "src.json"), "--target-shape", str(files / "beta.json"),
               "--constraints", str(files / "c.json"), "--window", "0.2", "--alphas", "10,50,1",
               "--out", str(files / "out.json"), "--report", str(files / "rep.json")])
    assert rc == EXIT_OK
    rep = json.loads((files / "rep.json").read_text())
    assert rep["converged"] and rep["windows"] == [[0, 6], [5, 8]]
    assert main(["metrics", "--source", str(files / "src.json"), "--result", str(files / "out.json"),
                 "--constraints", str(files / "c.json")]) == EXIT_OK
    printed = json.loads(capsys.readouterr().out)
    assert printed["constraint_errors"] == pytest.approx(rep["metrics"]["constraint_errors"])


@pytest.mark.filterwarnings("ignore::skelretarget.solver.ConvergenceWarning")
def test_non_convergence_still_writes(files):
    rc = main(["retarget", "--source", str(files / "src.json"), "--target-shape", str(files / "beta.json"),
               "--window", "0.2", "--max-iters", "1", "--out", str(files / "out.json")])
    assert rc == EXIT_NOT_CONVERGED
    assert (files / "out.json").exists()


def test_smooth(files):
    assert main(["smooth", "--in", str(files / "src.json"), "--out", str(files / "sm.json"),
                 "--report", str(files / "r.json")]) == EXIT_OK
    assert len(io.load_motion(files / "sm.json")) == 8


@pytest.mark.filterwarnings("ignore::skelretarget.solver.ConvergenceWarning")
def test_estimate(skeleton, tmp_path):
    K = CameraIntrinsics.default_for_image(1280, 720)
    obs = synthetic.synthetic_observations(skeleton, synthetic.camera_clip(skeleton, 3), K, angle_noise=0.02, seed=1)
    io.save_observations(tmp_path / "obs.json", obs, K)
    assert main(["estimate", "--obs", str(tmp_path / "obs.json"), "--out", str(tmp_path / "m.json"),
                 "--report", str(tmp_path / "r.json")]) == EXIT_OK
    assert len(io.load_motion(tmp_path / "m.json")) == 3
    assert main(["estimate", "--obs", str(tmp_path / "obs.json"), "--out", str(tmp_path / "m.json"),
                 "--max-iters", "1"]) == EXIT_NOT_CONVERGED


def test_demo_inputs_only(tmp_path):
    assert main(["--seed", "3", "demo", "--out-dir", str(tmp_path), "--no-solve"]) == EXIT_OK
    assert {p.name for p in tmp_path.iterdir()} == {
        "source.json", "beta_source.json", "beta_target.json", "constraints.json", "source_left_hand_y.csv"}
    assert main(["demo", "--out-dir", str(tmp_path), "--frames", "100"]) == EXIT_INVALID


@pytest.mark.parametrize("argv", [[], ["bogus"], ["smooth"], ["retarget", "--alphas", "1,2"]])
def test_bad_usage(argv):
    assert main(argv) == EXIT_INVALID


def test_invalid_inputs(files):
    (files / "bad.json").write_text("[")
    assert main(["smooth", "--in", str(files / "bad.json"), "--out", str(files / "x.json")]) == EXIT_INVALID
    assert main(["smooth", "--in", str(files / "missing.json"), "--out", str(files / "x.json")]) == EXIT_INVALID
    assert not (files / "x.json").exists()


def test_skeleton_flag(files, skeleton):
    io.save_skeleton(files / "sk.json", skeleton)
    assert main(["export-csv", "--skeleton", str(files / "sk.json"), "--in", str(files / "src.json"),
                 "--joint", "head", "--out", str(files / "h.csv")]) == EXIT_OK
    io.save_skeleton(files / "chain.json", chain_skeleton([1.0, 1.0]))
    assert main(["--skeleton", str(files / "chain.json"), "export-csv", "--in", str(files / "src.json"),
                 "--joint", "j1", "--out", str(files / "h.csv")]) == EXIT_INVALID


def test_module_entry_point(files):
    import subprocess
    import sys

    out = subprocess.run([sys.executable, "-m", "skelretarget", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "retarget" in out.stdout
