"""Incremental maximum-entropy IRL over image state transitions.

For every observed transition the reward of the forward change should beat
the reward of the reversed change.  With both rewards scalarised through
``v = (1/d) * ones`` the per-transition log objective is::

    ll = (r+ - r-) + (r+ - r-)**2 / (2 * sigma0**2)

whose maximum over [-1, 1]^2 is ``2 * (1 + 1 / sigma0**2)``.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import nn_core
from .errors import ConfigError, ShapeError
from .nn_core import NetworkParams
from .vision_state import (DEFAULT_SIDE, ImageState, StateChange, TransitionDataset, inverse_change,
                           modular_subtract, preprocess)

SIGMA_MIN = 0.05


def sigma_from_confidence(alpha: float) -> float:
    """Demonstrator confidence to prior width: ``max(0.05, 1 - alpha)``."""
    if not 0.0 < alpha <= 1.0:
        raise ConfigError(f"alpha must lie in (0, 1], got {alpha}")
    return max(SIGMA_MIN, 1.0 - alpha)


def scalarization_vector(d: int) -> np.ndarray:
    return np.full(d, 1.0 / d)


@dataclass(frozen=True)
class TrainerConfig:
    dof: int = 3
    alpha: float = 0.6
    epochs: int = 40
    learning_rate: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.dof < 1:
            raise ConfigError("dof must be >= 1")
        sigma_from_confidence(self.alpha)
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be non-negative")

    @property
    def sigma0(self) -> float:
        return sigma_from_confidence(self.alpha)

    @property
    def v(self) -> np.ndarray:
        return scalarization_vector(self.dof)


@dataclass(frozen=True)
class TransitionReward:
    r_plus: float
    r_minus: float
    ll: float
    beta: float


def scalarize(r, v) -> float:
    r = np.asarray(r, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if r.shape != v.shape:
        raise ShapeError(f"reward vector shape {r.shape} != scalarization shape {v.shape}")
    return float(r @ v)


def transition_objective(r_plus: float, r_minus: float, sigma0: float) -> TransitionReward:
    gap = r_plus - r_minus
    ll = gap + gap * gap / (2.0 * sigma0 * sigma0)
    return TransitionReward(r_plus, r_minus, ll, math.exp(ll))


def objective_gradients(r_plus: float, r_minus: float, sigma0: float) -> tuple[float, float]:
    g = 1.0 + (r_plus - r_minus) / (sigma0 * sigma0)
    return g, -g


def cost_upper_bound(sigma0: float) -> float:
    return 2.0 * (1.0 + 1.0 / (sigma0 * sigma0))


@dataclass
class LearningCurve:
    mean_ll: list = field(default_factory=list)
    bound_fraction: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    upper_bound: float = float("nan")

    def smoothed(self, window: int = 5) -> np.ndarray:
        """Trailing moving average of mean ll (shorter windows at the start)."""
        ll = np.asarray(self.mean_ll, dtype=np.float64)
        c = np.concatenate([[0.0], np.cumsum(ll)])
        idx = np.arange(1, ll.size + 1)
        lo = np.maximum(idx - window, 0)
        return (c[idx] - c[lo]) / (idx - lo)

    def write_csv(self, path, wall_clock: bool = True) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "mean_ll", "bound_fraction", "seconds"])
            for i, (ll, frac, sec) in enumerate(zip(self.mean_ll, self.bound_fraction, self.seconds)):
                w.writerow([i + 1, repr(ll), repr(frac), f"{sec:.3f}" if wall_clock else ""])


def train(dataset: TransitionDataset, net: NetworkParams, config: TrainerConfig,
          on_epoch: Optional[Callable[[int, float], None]] = None
          ) -> tuple[NetworkParams, LearningCurve]:
    """Per-transition stochastic gradient ascent on the Boltzmann-factor objective.

    The input network is left untouched; a trained copy is returned.
    """
    if len(dataset) == 0:
        raise ConfigError("cannot train on an empty dataset")
    if net.input_dim != dataset.input_dim:
        raise ShapeError(f"network input_dim {net.input_dim} != dataset dim {dataset.input_dim}")
    if net.output_dim != config.dof:
        raise ShapeError(f"network output_dim {net.output_dim} != dof {config.dof}")
    params = net.copy()
    sigma0 = config.sigma0
    v = config.v
    bound = cost_upper_bound(sigma0)
    curve = LearningCurve(upper_bound=bound)
    lr = config.learning_rate
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        total = 0.0
        for xp, xm in zip(dataset.x_plus, dataset.x_minus):
            yp, cp = nn_core.forward(params, xp)
            ym, cm = nn_core.forward(params, xm)
            rp, rm = float(yp @ v), float(ym @ v)
            total += transition_objective(rp, rm, sigma0).ll
            gp, gm = objective_gradients(rp, rm, sigma0)
            if lr:
                nn_core.ascend_inplace(params, [(cp, gp * v), (cm, gm * v)], lr)
        mean_ll = total / len(dataset)
        curve.mean_ll.append(mean_ll)
        curve.bound_fraction.append(mean_ll / bound)
        curve.seconds.append(time.perf_counter() - t0)
        if on_epoch is not None:
            on_epoch(epoch, mean_ll)
    return params, curve


def mean_objective(dataset: TransitionDataset, net: NetworkParams, config: TrainerConfig) -> float:
    """Mean ll of the dataset under fixed parameters."""
    v, sigma0 = config.v, config.sigma0
    total = 0.0
    for xp, xm in zip(dataset.x_plus, dataset.x_minus):
        rp = float(nn_core.forward(net, xp)[0] @ v)
        rm = float(nn_core.forward(net, xm)[0] @ v)
        total += transition_objective(rp, rm, sigma0).ll
    return total / len(dataset)


class LearnedTaskFunction:
    """Reward vector of the change between two frames under a trained network.

    Training only pins down ``T(ds) - T(inverse(ds))``; the symmetric part of
    the network output is whatever the initialisation left behind.  With
    ``antisymmetric`` set (the default) the reward is
    ``(T(ds) - T(inverse(ds))) / 2`` so that reversing a motion exactly negates
    its reward.  ``antisymmetric=False`` returns the raw ``T(ds)``.
    """

    def __init__(self, net: NetworkParams, side: int = DEFAULT_SIDE, antisymmetric: bool = True):
        if net.input_dim != side * side:
            raise ShapeError(f"network expects {net.input_dim} inputs, side {side} gives {side * side}")
        self.net = net
        self.side = side
        self.antisymmetric = antisymmetric

    @property
    def dof(self) -> int:
        return self.net.output_dim

    def of_change(self, ds: StateChange) -> np.ndarray:
        fwd = nn_core.forward(self.net, preprocess(ds, self.side))[0]
        if not self.antisymmetric:
            return fwd
        back = nn_core.forward(self.net, preprocess(inverse_change(ds), self.side))[0]
        return 0.5 * (fwd - back)

    def __call__(self, prev: ImageState, nxt: ImageState) -> np.ndarray:
        return self.of_change(modular_subtract(nxt, prev))


# -- reward field ------------------------------------------------------------------

def fibonacci_sphere(n: int) -> np.ndarray:
    """``n`` near-uniform unit vectors."""
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(1.0 - z * z)
    phi = math.pi * (3.0 - math.sqrt(5.0)) * i
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def reward_field(net: NetworkParams, scene, camera, center, n_dirs: int = 200,
                 step: float = 10.0, side: int = DEFAULT_SIDE,
                 antisymmetric: bool = False) -> list[tuple[np.ndarray, float]]:
    """Scalar reward for moving the object from ``center`` along sphere directions.

    The object is placed at ``center`` and moved by ``step`` along each of
    ``n_dirs`` Fibonacci-sphere directions (clipped to the workspace).
    """
    from .sim_world import render

    if n_dirs < 4:
        raise ConfigError("n_dirs must be >= 4")
    center = np.asarray(center, dtype=np.float64)
    if center.shape != (3,) or np.any(center < 0) or np.any(center > scene.workspace):
        raise ConfigError(f"probe center {center} outside the workspace")
    taskfn = LearnedTaskFunction(net, side, antisymmetric)
    v = scalarization_vector(net.output_dim)
    before = render(replace(scene, object_pos=center), camera)
    out = []
    for d in fibonacci_sphere(n_dirs):
        moved = np.clip(center + step * d, 0.0, scene.workspace)
        after = render(replace(scene, object_pos=moved), camera)
        out.append((d, scalarize(taskfn(before, after), v)))
    return out


def write_reward_field_csv(field_: Sequence[tuple[np.ndarray, float]], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dir_x", "dir_y", "dir_z", "reward"])
        for d, r in field_:
            w.writerow([repr(float(d[0])), repr(float(d[1])), repr(float(d[2])), repr(r)])
