import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skelretarget import synthetic
from skelretarget.kinematics import Motion, chain_skeleton, fk, motion_positions
from skelretarget.retarget import (
    Constraint,
    RetargetConfig,
    WeightConfig,
    constraint_residual,
    default_weights,
    prediction_residual,
    retarget_motion,
    window_problem,
    window_ranges,
)

from .helpers import jacobian_error

LEFT_HAND = 22


@pytest.fixture(scope="module")
def clip(skeleton):
    return synthetic.random_motion(skeleton, 12, seed=3)


def small_cfg(**kw):
    # 0.2 s windows keep solves short in unit tests
    return RetargetConfig(**{"window_seconds": 0.2, **kw})


def test_prediction_residual_examples(skeleton, clip):
    off = skeleton.template
    th, tr = clip.theta[:4], clip.translation[:4]
    np.testing.assert_allclose(prediction_residual(skeleton, off, off, th, tr, th, tr), 0.0, atol=1e-15)
    static = np.broadcast_to(th[0], th.shape)
    r = prediction_residual(skeleton, off, off, static, np.zeros((4, 3)), static, np.zeros((4, 3)))
    np.testing.assert_array_equal(r, 0.0)
    # uniform scale 1.1 with the root at the origin: target displacements are 1.1x source
    zero_t = np.zeros((4, 3))
    r = prediction_residual(skeleton, 1.1 * off, off, th, zero_t, th, zero_t).reshape(3, 24, 3)
    P = fk(skeleton, off, th, zero_t).positions
    np.testing.assert_allclose(r, 0.1 * (P[1:] - P[:-1]), atol=1e-14)
    with pytest.raises(ValueError):
        prediction_residual(skeleton, off, off, th[:1], tr[:1], th[:1], tr[:1])


def test_constraint_residual_examples(skeleton, clip):
    off = skeleton.template
    P = fk(skeleton, off, clip.theta[0], clip.translation[0]).positions
    c = Constraint(0, LEFT_HAND, P[LEFT_HAND])
    np.testing.assert_allclose(constraint_residual(skeleton, off, clip.theta[0], clip.translation[0], [c]),
                               0.0, atol=1e-15)
    below = Constraint(0, LEFT_HAND, P[LEFT_HAND] + [0.0, 0.05, 0.0])
    np.testing.assert_allclose(constraint_residual(skeleton, off, clip.theta[0], clip.translation[0], [below]),
                               [0.0, -0.05, 0.0], atol=1e-15)
    two = constraint_residual(skeleton, off, clip.theta[0], clip.translation[0], [below, Constraint(0, 10, P[10])])
    assert two.shape == (6,)


def test_constraint_validation():
    with pytest.raises(ValueError):
        Constraint(0, 1, np.zeros(3), tolerance=0.0)
    with pytest.raises(ValueError):
        Constraint(-1, 1, np.zeros(3))
    with pytest.raises(ValueError):
        Constraint(0, 1, np.zeros(3), target_orientation=2 * np.eye(3))
    assert Constraint(0, 1, np.zeros(3), target_orientation=np.eye(3)).residual_size == 12


def test_default_weights_examples(skeleton):
    w = default_weights(skeleton, 0.5)
    assert w.w_pred[0] == 1.0 and w.w_pred[15] == 0.5 ** 5
    np.testing.assert_array_equal(default_weights(skeleton, 1.0).w_reg, 1.0)
    with pytest.raises(ValueError):
        default_weights(skeleton, 0.0)
    with pytest.raises(ValueError):
        WeightConfig(np.ones(24), np.zeros(24))
    inverted = WeightConfig(1.0 / w.w_pred, w.w_reg)
    with pytest.raises(ValueError, match="root-proximal"):
        inverted.check_root_proximal(skeleton)


def test_window_ranges_examples():
    assert window_ranges(10, 4, 0) == [(0, 4), (4, 8), (8, 10)]
    assert window_ranges(10, 4, 2) == [(0, 4), (2, 6), (4, 8), (6, 10)]
    assert window_ranges(3, 4, 1) == [(0, 3)]


def test_config_validation():
    with pytest.raises(ValueError):
        RetargetConfig(window_seconds=0.0)
    with pytest.raises(ValueError):
        RetargetConfig(alpha2=-1.0)
    with pytest.raises(ValueError):
        RetargetConfig(window_seconds=0.01).window_length(30.0)
    with pytest.raises(ValueError):
        RetargetConfig(overlap_frames=6).overlap(6)
    assert RetargetConfig().window_length(30.0) == 60 and RetargetConfig().overlap(60) == 15


@pytest.mark.parametrize("overlap", [0, 3])
def test_identity_retarget(skeleton, clip, overlap):
    res = retarget_motion(clip, clip.beta, cfg=small_cfg(overlap_frames=overlap), skeleton=skeleton)
    assert res.converged
    np.testing.assert_allclose(res.motion.theta, clip.theta, atol=1e-12)
    np.testing.assert_allclose(res.motion.translation, clip.translation, atol=1e-12)
    assert res.constraint_report == []


def test_zero_prediction_and_constraint_weight_keeps_source(skeleton, clip):
    beta_t = np.zeros(10)
    beta_t[synthetic.ARM_BETA] = 1.0
    c = Constraint(3, LEFT_HAND, np.array([0.0, 0.0, 0.0]))
    res = retarget_motion(clip, beta_t, constraints=[c], cfg=small_cfg(alpha1=0.0, alpha2=0.0), skeleton=skeleton)
    np.testing.assert_allclose(res.motion.vectors(), clip.vectors(), atol=1e-12)


def test_dominant_constraint_is_met(skeleton, clip):
    P = motion_positions(skeleton, clip)
    target = P[4, LEFT_HAND] + [0.05, -0.08, 0.03]
    c = Constraint(4, LEFT_HAND, target)
    res = retarget_motion(clip, clip.beta, constraints=[c], cfg=small_cfg(alpha2=1000.0), skeleton=skeleton)
    assert res.constraint_report[0] < 1e-3


def test_orientation_constraint_is_met(skeleton, clip):
    poses = fk(skeleton, skeleton.template, clip.theta, clip.translation)
    R = poses.rotations[5, LEFT_HAND] @ np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    c = Constraint(5, LEFT_HAND, poses.positions[5, LEFT_HAND], target_orientation=R)
    res = retarget_motion(clip, clip.beta, constraints=[c], cfg=small_cfg(alpha2=1000.0), skeleton=skeleton)
    got = fk(skeleton, skeleton.template, res.motion.theta, res.motion.translation).rotations[5, LEFT_HAND]
    assert np.abs(got - R).max() < 1e-2


def test_window_jacobian_and_cost(skeleton, clip, rng):
    P = motion_positions(skeleton, clip)
    c = Constraint(1, LEFT_HAND, P[1, LEFT_HAND] + 0.05, target_orientation=np.eye(3))
    src = Motion(clip.theta[:3], clip.translation[:3], clip.fps)
    beta_t = rng.normal(0, 0.5, 10)
    problem, x0, _ = window_problem(skeleton, src, beta_t, np.zeros(10), [c], default_weights(skeleton),
                                    RetargetConfig())
    assert jacobian_error(problem, x0 + rng.normal(0, 0.05, x0.size)) < 1e-6


def test_window_problem_validation(skeleton, clip):
    src = Motion(clip.theta[:3], clip.translation[:3], clip.fps)
    with pytest.raises(ValueError, match="outside window"):
        window_problem(skeleton, src, np.zeros(10), np.zeros(10), [Constraint(3, 1, np.zeros(3))],
                       default_weights(skeleton), RetargetConfig())
    with pytest.raises(ValueError, match="outside motion"):
        retarget_motion(clip, np.zeros(10), constraints=[Constraint(12, 1, np.zeros(3))], skeleton=skeleton)
    with pytest.raises(ValueError, match="does not exist"):
        retarget_motion(clip, np.zeros(10), constraints=[Constraint(0, 30, np.zeros(3))], skeleton=skeleton)


def test_window_costs_do_not_rise(skeleton, clip):
    beta_t = np.zeros(10)
    beta_t[synthetic.ARM_BETA] = -1.0
    res = retarget_motion(clip, beta_t, cfg=small_cfg(), skeleton=skeleton)
    for r in res.reports:
        h = r.cost_history
        assert all(b <= a for a, b in zip(h, h[1:]))
    assert len(res.per_window_cost) == len(res.windows)


def test_unreachable_constraint_reports_deficit():
    sk = chain_skeleton([0.5, 0.5])
    m = Motion(np.zeros((1, 3, 3)), np.zeros((1, 3)), 30.0)
    c = Constraint(0, 2, np.array([2.0, 0.0, 0.0]))
    res = retarget_motion(m, np.zeros(10), constraints=[c], weights=default_weights(sk),
                          cfg=small_cfg(alpha2=100.0, optimize_root_translation=False), skeleton=sk)
    # the tip stays on the unit sphere, so at least 1 m short of the target
    assert res.constraint_report[0] >= 1.0 - 1e-9
    np.testing.assert_array_equal(res.motion.translation, 0.0)


def test_parallel_matches_disjoint_sequential(skeleton, clip):
    beta_t = np.zeros(10)
    beta_t[synthetic.ARM_BETA] = 0.8
    a = retarget_motion(clip, beta_t, cfg=small_cfg(parallel=True), skeleton=skeleton)
    assert a.windows == window_ranges(12, 6, 0)
    np.testing.assert_allclose(motion_positions(skeleton, a.motion)[:6],
                               motion_positions(skeleton, retarget_motion(
                                   Motion(clip.theta[:6], clip.translation[:6], clip.fps), beta_t,
                                   cfg=small_cfg(), skeleton=skeleton).motion), atol=1e-9)


def test_fixed_root_translation(skeleton, clip):
    beta_t = np.zeros(10)
    beta_t[0] = 1.0
    res = retarget_motion(clip, beta_t, cfg=small_cfg(optimize_root_translation=False), skeleton=skeleton)
    np.testing.assert_array_equal(res.motion.translation, clip.translation)


@settings(max_examples=8)
@given(st.integers(0, 10_000))
def test_retarget_preserves_style_better_than_copy(skeleton, clip, seed):
    # copying angles onto a new shape changes displacements; the solve must not do worse
    rng = np.random.default_rng(seed)
    beta_t = rng.normal(0, 1.0, 10)
    res = retarget_motion(clip, beta_t, cfg=small_cfg(), skeleton=skeleton)
    P_s = motion_positions(skeleton, clip)
    copied = motion_positions(skeleton, clip, beta_t)
    P_t = motion_positions(skeleton, res.motion)

    def gap(P):
        return np.sum(((P[1:] - P[:-1]) - (P_s[1:] - P_s[:-1])) ** 2)

    assert gap(P_t) <= gap(copied) + 1e-12


@settings(max_examples=6)
@given(st.floats(0.5, 5.0), st.floats(1.5, 4.0))
def test_heavier_constraint_weight_never_worse(skeleton, clip, a2, factor):
    P = motion_positions(skeleton, clip)
    c = [Constraint(2, LEFT_HAND, P[2, LEFT_HAND] + [0.0, -0.1, 0.05])]
    lo = retarget_motion(clip, clip.beta, constraints=c, cfg=small_cfg(alpha2=a2), skeleton=skeleton)
    hi = retarget_motion(clip, clip.beta, constraints=c, cfg=small_cfg(alpha2=a2 * factor), skeleton=skeleton)
    assert hi.constraint_report[0] <= lo.constraint_report[0] + 1e-9


def test_per_constraint_weight_override(skeleton):
    cs = [Constraint(0, 1, np.zeros(3)), Constraint(0, 2, np.zeros(3), weight=4.0)]
    np.testing.assert_array_equal(default_weights(skeleton).constraint_weights(cs), [1.0, 4.0])
    w = dataclasses.replace(default_weights(skeleton), w_constr=[2.0, 3.0])
    np.testing.assert_array_equal(w.constraint_weights(cs), [2.0, 4.0])
