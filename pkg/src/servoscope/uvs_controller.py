"""Uncalibrated visual servoing driven by a reward-vector task function.

The controller never sees geometry.  It holds an environment handle it may
only ``step(dq)`` and ``render()``, and a task function mapping two frames to
a reward vector.  Each control step asks for the joint motion the current
Jacobian estimate predicts will yield the maximum reward ``[1, ..., 1]``,
executes it, observes the actual reward, and corrects the estimate with a
Broyden rank-one update.
"""
from __future__ import annotations

import csv
import logging
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Protocol, Sequence

import numpy as np

from .errors import ConfigError, OutOfViewError, ProbeError, SingularJacobianError
from .irl_trainer import scalarization_vector, scalarize
from .sim_world import scaled_threshold
from .vision_state import ImageState

log = logging.getLogger(__name__)


class Environment(Protocol):
    def step(self, dq) -> None: ...

    def render(self) -> ImageState: ...


TaskFunction = Callable[[ImageState, ImageState], np.ndarray]


@dataclass(frozen=True)
class ControllerConfig:
    dof: int = 3
    joints: int = 3
    step_gain: float = 1.0
    damping: float = 1e-3
    r_thres: Optional[tuple] = None  # defaults to zeros(dof)
    recalib_patience: int = 5
    min_singular: float = 1e-4
    probe_eps: float = 5.0
    probe_mode: str = "axis"  # or "random" (least-squares over random probes)
    max_step: float = 10.0  # joint-space norm cap per control step
    shrink: float = 0.5  # step-radius factor after a negative scalar reward (1 = off)
    grow: float = 1.2  # step-radius factor after a positive one, capped at max_step
    min_step: float = 0.5
    broyden_eps_min: float = 1e-8
    max_steps: int = 100
    success_threshold_px: float = scaled_threshold()
    dt: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.step_gain <= 0 or self.probe_eps <= 0:
            raise ConfigError("step_gain and probe_eps must be positive")
        if self.damping < 0:
            raise ConfigError("damping must be non-negative")
        if self.recalib_patience < 1:
            raise ConfigError("recalib_patience must be >= 1")
        if self.min_singular <= 0 or self.max_step <= 0 or self.dt <= 0:
            raise ConfigError("min_singular, max_step and dt must be positive")
        if self.probe_mode not in ("axis", "random"):
            raise ConfigError(f"unknown probe_mode {self.probe_mode!r}")
        if self.r_thres is not None and len(self.r_thres) != self.dof:
            raise ConfigError("r_thres must have one entry per task DOF")
        if self.max_steps < 0:
            raise ConfigError("max_steps must be non-negative")
        if not (0.0 < self.shrink <= 1.0 <= self.grow):
            raise ConfigError("need 0 < shrink <= 1 <= grow")
        if not 0.0 < self.min_step <= self.max_step:
            raise ConfigError("need 0 < min_step <= max_step")

    @property
    def r_max(self) -> np.ndarray:
        return np.ones(self.dof)

    @property
    def threshold_vector(self) -> np.ndarray:
        return np.zeros(self.dof) if self.r_thres is None else np.asarray(self.r_thres, float)


@dataclass(frozen=True)
class JacobianEstimate:
    J: np.ndarray  # (dof, joints)
    steps_since_calibration: int = 0
    calibration_count: int = 1


def _probe(env: Environment, taskfn: TaskFunction, dq: np.ndarray) -> Optional[np.ndarray]:
    """Reward of moving by ``dq`` and back; None if nothing visibly changed."""
    before = env.render()
    env.step(dq)
    after = env.render()
    r = None
    if not np.array_equal(before.pixels, after.pixels):
        r = np.asarray(taskfn(before, after), dtype=np.float64)
    env.step(-dq)
    return r


def estimate_initial_jacobian(env: Environment, taskfn: TaskFunction, config: ControllerConfig,
                              calibration_count: int = 1) -> JacobianEstimate:
    """Probe the task function with small joint motions, undoing each one.

    In ``axis`` mode joint i is moved by +eps (or -eps if +eps produced no
    visible change) and column i is the observed reward over the signed eps.
    """
    m, eps = config.joints, config.probe_eps
    if config.probe_mode == "random":
        rng = np.random.default_rng(config.seed + calibration_count)
        dirs = rng.normal(size=(2 * m, m))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        dqs, rewards = [], []
        for d in dirs:
            r = _probe(env, taskfn, eps * d)
            if r is not None:
                dqs.append(eps * d)
                rewards.append(r)
        if len(dqs) < m or np.linalg.matrix_rank(np.array(dqs)) < m:
            raise ProbeError("random probes did not span joint space with visible changes")
        dq_mat, r_mat = np.array(dqs), np.array(rewards)
        # r_k = J dq_k for every probe, solved column-wise in least squares
        J = np.linalg.lstsq(dq_mat, r_mat, rcond=None)[0].T
        return JacobianEstimate(J, 0, calibration_count)
    J = np.zeros((config.dof, m))
    for i in range(m):
        for sign in (1.0, -1.0):
            dq = np.zeros(m)
            dq[i] = sign * eps
            r = _probe(env, taskfn, dq)
            if r is not None:
                J[:, i] = r / (sign * eps)
                break
        else:
            raise ProbeError(f"probing joint {i} with eps={eps} produced no visible change")
    return JacobianEstimate(J, 0, calibration_count)


def compute_action(J: JacobianEstimate, config: ControllerConfig,
                   radius: Optional[float] = None) -> np.ndarray:
    """Damped pseudoinverse step ``gain * J^T (J J^T + mu I)^-1 R_max``.

    The result is scaled down to norm ``radius`` (default ``max_step``) if longer.
    """
    A = np.asarray(J.J, dtype=np.float64)
    if not np.all(np.isfinite(A)):
        raise SingularJacobianError("non-finite Jacobian estimate")
    gram = A @ A.T
    if config.damping == 0.0:
        s = np.linalg.svd(A, compute_uv=False)
        if s.size == 0 or s[-1] <= 1e-12 * max(s[0], 1e-300) or A.shape[0] > np.count_nonzero(s):
            raise SingularJacobianError("J J^T is singular; re-calibrate")
    gram = gram + config.damping * np.eye(A.shape[0])
    dq = config.step_gain * (A.T @ np.linalg.solve(gram, config.r_max))
    cap = config.max_step if radius is None else radius
    norm = float(np.linalg.norm(dq))
    if norm > cap:
        dq *= cap / norm
    return dq


def broyden_update(J: JacobianEstimate, dq, r_obs, eps_min: float = 1e-8) -> JacobianEstimate:
    """Rank-one secant correction so that ``J' dq == r_obs``."""
    dq = np.asarray(dq, dtype=np.float64)
    r_obs = np.asarray(r_obs, dtype=np.float64)
    denom = float(dq @ dq)
    if denom < eps_min:
        return replace(J, steps_since_calibration=J.steps_since_calibration + 1)
    residual = r_obs - J.J @ dq
    return replace(J, J=J.J + np.outer(residual, dq) / denom,
                   steps_since_calibration=J.steps_since_calibration + 1)


def needs_recalibration(recent_scalar_rewards: Sequence[float], J: JacobianEstimate,
                        config: ControllerConfig) -> bool:
    """Re-probe after K consecutive sub-threshold rewards or near rank loss."""
    k = config.recalib_patience
    thres = scalarize(config.threshold_vector, scalarization_vector(config.dof))
    recent = list(recent_scalar_rewards)[-k:]
    if len(recent) == k and all(r < thres for r in recent):
        return True
    s = np.linalg.svd(np.asarray(J.J, dtype=np.float64), compute_uv=False)
    return bool(s.size < config.dof or s[-1] < config.min_singular)


# -- closed loop -------------------------------------------------------------------

@dataclass
class TraceStep:
    step: int
    q: np.ndarray
    dq: np.ndarray
    r_obs: np.ndarray
    scalar_reward: float
    cum_reward: float
    pixel_error: float
    recalibrated: bool


@dataclass
class ExecutionTrace:
    initial_error: float
    steps: list = field(default_factory=list)
    success: bool = False
    reason: str = ""
    probe_steps: int = 0
    calibrations: int = 0

    @property
    def steps_used(self) -> int:
        return len(self.steps)

    @property
    def final_error(self) -> float:
        return self.steps[-1].pixel_error if self.steps else self.initial_error

    def cumulative_rewards(self) -> np.ndarray:
        return np.array([0.0] + [s.cum_reward for s in self.steps])

    def errors(self) -> np.ndarray:
        return np.array([self.initial_error] + [s.pixel_error for s in self.steps])

    def reward_error_correlation(self) -> float:
        """Pearson r between cumulative reward and error reduction, step 0 included."""
        cum = self.cumulative_rewards()
        reduction = self.initial_error - self.errors()
        if cum.size < 2 or np.std(cum) == 0 or np.std(reduction) == 0:
            return float("nan")
        return float(np.corrcoef(cum, reduction)[0, 1])

    def write_csv(self, path) -> None:
        if self.steps:
            m, d = self.steps[0].q.size, self.steps[0].r_obs.size
        else:
            m, d = 3, 3
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(
                ["step"] + [f"q{i}" for i in range(m)] + [f"dq{i}" for i in range(m)]
                + [f"r{i}" for i in range(d)]
                + ["scalar_reward", "cum_reward", "pixel_error", "recalibrated"]
            )
            for s in self.steps:
                w.writerow(
                    [s.step] + [repr(float(x)) for x in s.q] + [repr(float(x)) for x in s.dq]
                    + [repr(float(x)) for x in s.r_obs]
                    + [repr(s.scalar_reward), repr(s.cum_reward), repr(s.pixel_error),
                       int(s.recalibrated)]
                )


def run_execution(env: Environment, taskfn: TaskFunction, config: ControllerConfig,
                  evaluate: Callable[[], float]) -> ExecutionTrace:
    """Closed-loop servoing until ``evaluate()`` drops below the success threshold.

    ``evaluate`` is the ground-truth pixel error.  It decides termination and
    fills the trace; no control decision reads it.
    """
    v = scalarization_vector(config.dof)
    try:
        trace = ExecutionTrace(initial_error=evaluate())
    except OutOfViewError as exc:
        return ExecutionTrace(float("nan"), reason=f"out of view: {exc}")
    if trace.initial_error < config.success_threshold_px:
        trace.success = True
        return trace
    history: deque = deque(maxlen=config.recalib_patience)
    J: Optional[JacobianEstimate] = None
    q = np.zeros(config.joints)  # commanded joint offset from the start pose
    cum = 0.0
    radius = config.max_step
    for k in range(config.max_steps):
        recal = False
        try:
            if J is None or needs_recalibration(history, J, config):
                J = estimate_initial_jacobian(env, taskfn, config, trace.calibrations + 1)
                trace.calibrations += 1
                trace.probe_steps += 2 * config.joints * (2 if config.probe_mode == "random" else 1)
                history.clear()
                recal = True
            try:
                dq = compute_action(J, config, radius)
            except SingularJacobianError:
                # undamped law hit a singular estimate: re-probe, then damp minimally
                J = estimate_initial_jacobian(env, taskfn, config, trace.calibrations + 1)
                trace.calibrations += 1
                recal = True
                dq = compute_action(J, replace(config, damping=max(config.damping, 1e-9)), radius)
        except ProbeError as exc:
            trace.reason = f"probe failed: {exc}"
            return trace
        before = env.render()
        env.step(dq)
        after = env.render()
        q = q + dq
        r_obs = np.asarray(taskfn(before, after), dtype=np.float64)
        s = scalarize(r_obs, v)
        cum += s
        J = broyden_update(J, dq, r_obs, config.broyden_eps_min)
        history.append(s)
        if s < 0:
            radius = max(config.min_step, radius * config.shrink)
        elif s > 0:
            radius = min(config.max_step, radius * config.grow)
        try:
            err = evaluate()
        except OutOfViewError as exc:
            trace.reason = f"out of view: {exc}"
            return trace
        trace.steps.append(TraceStep(k + 1, q.copy(), dq, r_obs, s, cum, err, recal))
        if err < config.success_threshold_px:
            trace.success = True
            return trace
    trace.reason = "max_steps reached"
    return trace
