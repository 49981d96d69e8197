import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from servoscope.errors import ConfigError, ProbeError, SingularJacobianError
from servoscope.sim_world import ALIGNED_MOUNT, CameraModel, ProgressOracle, Scene, SimEnv
from servoscope.uvs_controller import (ControllerConfig, JacobianEstimate, broyden_update,
                                       compute_action, estimate_initial_jacobian,
                                       needs_recalibration, run_execution)

finite = st.floats(-5, 5, allow_nan=False)


def est(a):
    return JacobianEstimate(np.array(a, dtype=float))


def test_action_examples():
    cfg = ControllerConfig(dof=2, joints=2, damping=0.0)
    np.testing.assert_allclose(compute_action(est([[10, 0], [0, 10]]), cfg), [0.1, 0.1])
    np.testing.assert_allclose(compute_action(est([[2, 0], [0, 1]]), cfg), [0.5, 1.0])


@settings(max_examples=100, deadline=None)
@given(a=arrays(np.float64, (3, 3), elements=finite))
def test_undamped_square_action_solves_for_max_reward(a):
    cfg = ControllerConfig(damping=0.0, max_step=1e9)
    if np.linalg.cond(a) > 1e6:
        return
    dq = compute_action(est(a), cfg)
    np.testing.assert_allclose(a @ dq, np.ones(3), atol=1e-6 * max(1.0, np.abs(dq).max()))


def test_zero_jacobian():
    assert not compute_action(est(np.zeros((3, 3))), ControllerConfig()).any()
    with pytest.raises(SingularJacobianError):
        compute_action(est(np.zeros((3, 3))), ControllerConfig(damping=0.0))
    with pytest.raises(SingularJacobianError):
        compute_action(est([[1, 0, 0], [1, 0, 0], [0, 0, 1]]), ControllerConfig(damping=0.0))


def test_action_norm_is_capped():
    cfg = ControllerConfig(max_step=2.0)
    dq = compute_action(est(np.eye(3) * 0.01), cfg)
    assert np.linalg.norm(dq) == pytest.approx(2.0)
    assert np.linalg.norm(compute_action(est(np.eye(3) * 0.01), cfg, radius=0.5)) == pytest.approx(0.5)


def test_non_square_action_is_min_norm():
    a = np.array([[1.0, 2.0, 0.0]])
    cfg = ControllerConfig(dof=1, joints=3, damping=0.0)
    dq = compute_action(est(a), cfg)
    np.testing.assert_allclose(dq, np.linalg.pinv(a) @ [1.0])


def test_broyden_example():
    J = broyden_update(est(np.eye(3)), [1, 0, 0], [2, 0, 0])
    np.testing.assert_allclose(J.J, np.diag([2.0, 1, 1]))
    assert J.steps_since_calibration == 1


@settings(max_examples=100, deadline=None)
@given(a=arrays(np.float64, (3, 3), elements=finite), dq=arrays(np.float64, 3, elements=finite),
       r=arrays(np.float64, 3, elements=finite), w=arrays(np.float64, 3, elements=finite))
def test_broyden_secant_and_minimal_change(a, dq, r, w):
    if dq @ dq < 1e-3:
        return
    J = broyden_update(est(a), dq, r)
    assert np.max(np.abs(J.J @ dq - r)) <= 1e-9 * max(1.0, np.abs(r).max(), np.abs(a).max())
    # directions orthogonal to dq are untouched
    w_perp = w - (w @ dq) / (dq @ dq) * dq
    np.testing.assert_allclose(J.J @ w_perp, a @ w_perp, atol=1e-8 * max(1.0, np.abs(a).max()))


def test_tiny_step_skips_update():
    J = broyden_update(est(np.eye(3)), [1e-6, 0, 0], [5, 5, 5])
    np.testing.assert_array_equal(J.J, np.eye(3))


def test_needs_recalibration():
    cfg = ControllerConfig(recalib_patience=3)
    good = est(np.eye(3))
    assert needs_recalibration([-0.1, -0.2, -0.3], good, cfg)
    assert not needs_recalibration([-0.1, 0.2, -0.3], good, cfg)
    assert not needs_recalibration([-0.1, -0.2], good, cfg)
    assert needs_recalibration([], est(np.diag([1, 1, 1e-6])), cfg)
    assert not needs_recalibration([], est(np.diag([1, 1, 1e-3])), cfg)
    thr = ControllerConfig(recalib_patience=2, r_thres=(0.5, 0.5, 0.5))
    assert needs_recalibration([0.2, 0.3], good, thr)


@pytest.mark.parametrize("kw", [{"step_gain": 0}, {"damping": -1}, {"recalib_patience": 0},
                                {"probe_mode": "spiral"}, {"r_thres": (0, 0)}, {"shrink": 0},
                                {"grow": 0.9}, {"min_step": 20.0}, {"max_steps": -1}])
def test_controller_config_validation(kw):
    with pytest.raises(ConfigError):
        ControllerConfig(**kw)


# -- probing and closed loop ----------------------------------------------------------

class AuditEnv:
    """Exposes only step/render of a wrapped environment and logs every access."""

    def __init__(self, env):
        self._env = env
        self.calls = []

    def step(self, dq):
        self.calls.append("step")
        self._env.step(dq)

    def render(self):
        self.calls.append("render")
        return self._env.render()

    def __getattr__(self, name):
        raise AssertionError(f"controller touched env.{name}")


def make_env(pos=(70.0, 80.0, 10.0), mount=ALIGNED_MOUNT):
    return SimEnv(Scene(object_pos=pos), CameraModel(), mount=mount)


def test_axis_probe_uses_two_moves_per_joint_and_restores_pose():
    env = make_env()
    audit = AuditEnv(env)
    start = env.render()
    estimate_initial_jacobian(audit, ProgressOracle(env), ControllerConfig())
    assert audit.calls.count("step") == 6
    assert env.render() == start


def test_zero_task_function_gives_zero_jacobian():
    env = make_env()
    J = estimate_initial_jacobian(env, lambda a, b: np.zeros(3), ControllerConfig())
    assert not J.J.any()


def test_probe_jacobian_matches_geometry():
    # with the aligned mount, column i is the progress of an eps move along axis i
    pos = np.array([70.0, 80.0, 10.0])
    env = make_env(tuple(pos))
    cfg = ControllerConfig(probe_eps=2.0)
    J = estimate_initial_jacobian(env, ProgressOracle(env, step_size=10.0), cfg)
    target = np.array(Scene().target_pos)
    for i in range(3):
        moved = pos.copy()
        moved[i] += 2.0
        progress = np.linalg.norm(pos - target) - np.linalg.norm(moved - target)
        np.testing.assert_allclose(J.J[:, i], progress / 10.0 / 2.0, rtol=1e-9)


def test_invisible_probe_raises():
    env = SimEnv(Scene(object_pos=(100, 100, 10)), CameraModel(eye=(100, 100, 300),
                                                               look_at=(100, 100, 600)))
    with pytest.raises(ProbeError):
        estimate_initial_jacobian(env, lambda a, b: np.ones(3), ControllerConfig())


def test_random_probe_mode_recovers_a_linear_task():
    env = make_env()
    A = np.array([[0.1, 0.0, 0.02], [0.0, 0.2, 0.0], [0.03, 0.0, 0.1]])

    def linear(prev, nxt):
        o, n = env.last_motion
        return A @ (np.asarray(n) - np.asarray(o))

    J = estimate_initial_jacobian(env, linear, ControllerConfig(probe_mode="random"))
    np.testing.assert_allclose(J.J, A, atol=1e-9)


def test_execution_with_oracle_converges_and_only_uses_step_and_render(tmp_path):
    env = SimEnv(Scene(object_pos=(70, 80, 10)), CameraModel())  # hidden mount
    audit = AuditEnv(env)
    trace = run_execution(audit, ProgressOracle(env), ControllerConfig(seed=1), env.pixel_error)
    assert trace.success and trace.final_error < 4.41
    assert set(audit.calls) == {"step", "render"}
    assert trace.reward_error_correlation() > 0.8
    trace.write_csv(tmp_path / "t.csv")
    rows = list(csv.reader(open(tmp_path / "t.csv")))
    assert rows[0][:4] == ["step", "q0", "q1", "q2"] and rows[0][-1] == "recalibrated"
    assert len(rows) == trace.steps_used + 1
    cum = np.cumsum([s.scalar_reward for s in trace.steps])
    np.testing.assert_allclose(cum, trace.cumulative_rewards()[1:])


def test_already_at_goal():
    env = SimEnv(Scene(object_pos=(100, 100, 0)), CameraModel())
    trace = run_execution(env, ProgressOracle(env), ControllerConfig(), env.pixel_error)
    assert trace.success and trace.steps_used == 0 and env.steps == 0


def test_step_budget_is_respected():
    env = make_env()
    cfg = ControllerConfig(max_steps=3, max_step=0.5, min_step=0.5)
    trace = run_execution(env, ProgressOracle(env), cfg, env.pixel_error)
    assert not trace.success and trace.steps_used == 3 and trace.reason == "max_steps reached"


def test_trust_region_shrinks_after_negative_reward():
    # a task function that always reports regress forces the radius down to min_step
    env = make_env()
    cfg = ControllerConfig(max_steps=6, min_step=0.5, recalib_patience=100)

    def flipped(prev, nxt):
        o, n = env.last_motion
        return -0.1 * np.abs(np.asarray(n) - np.asarray(o))

    trace = run_execution(env, flipped, cfg, env.pixel_error)
    norms = [np.linalg.norm(s.dq) for s in trace.steps]
    assert norms[0] == pytest.approx(10.0)
    for a, b in zip(norms, norms[1:]):
        assert b == pytest.approx(max(0.5, a * 0.5))
