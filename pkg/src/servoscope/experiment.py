"""Pipeline pieces shared by the CLI: demos, training, trials and suites.

Seed derivation, all from the master seed ``s``:

* demo start poses: ``default_rng([s, 1])``, drawn in demo order
* demo ``i`` expert noise: first word of ``SeedSequence([s, 2, i])``
* network init and dataset shuffle: ``s``
* execution trial ``i``: start pose from ``default_rng(s + i)``; controller seed ``s + i``
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import nn_core
from .config import ExperimentConfig
from .errors import ConfigError, FormatError
from .irl_trainer import LearnedTaskFunction, LearningCurve, reward_field, train
from .nn_core import NetworkParams
from .sim_world import (Demonstration, ExpertConfig, Perturbation, SimEnv, apply_perturbation,
                        generate_demonstration, sample_start)
from .uvs_controller import ExecutionTrace, run_execution
from .vision_state import build_transition_dataset, read_pgm, write_pgm

log = logging.getLogger(__name__)

WEIGHTS_FILE = "weights.tfn"
CURVE_FILE = "learning_curve.csv"
TRAIN_META_FILE = "train_meta.json"
DEMO_DIR = "demos"


def demo_noise_seed(master_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([master_seed, 2, index]).generate_state(1)[0])


def generate_demos(cfg: ExperimentConfig, count: Optional[int] = None) -> list[Demonstration]:
    count = cfg.demos if count is None else count
    rng = np.random.default_rng([cfg.seed, 1])
    camera, base = cfg.camera(), cfg.base_scene()
    demos = []
    for i in range(count):
        start = sample_start(rng, base, camera, cfg.scene.min_start_px,
                             cfg.scene.start_low, cfg.scene.start_high)
        expert = replace(cfg.expert, noise_seed=demo_noise_seed(cfg.seed, i))
        demos.append(generate_demonstration(start, camera, expert))
    return demos


def save_demos(demos: Sequence[Demonstration], root, seed: int) -> None:
    root = Path(root)
    for i, demo in enumerate(demos):
        d = root / f"demo_{i:03d}"
        d.mkdir(parents=True, exist_ok=True)
        for t, frame in enumerate(demo.frames):
            write_pgm(frame, d / f"frame_{t:04d}.pgm")
        manifest = {
            "frames": len(demo.frames),
            "alpha": demo.expert.alpha,
            "seed": seed,
            "noise_seed": demo.expert.noise_seed,
            "step_size": demo.expert.step_size,
            "reached": demo.reached,
            "ground_truth": [[list(map(float, o)), list(map(float, t))] for o, t in demo.ground_truth],
            "image_w": demo.frames[0].width,
            "image_h": demo.frames[0].height,
        }
        (d / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")


def load_demos(root) -> list[Demonstration]:
    root = Path(root)
    dirs = sorted(p for p in root.glob("demo_*") if p.is_dir())
    if not dirs:
        raise FormatError(f"no demo_* directories under {root}")
    demos = []
    for d in dirs:
        try:
            manifest = json.loads((d / "manifest.json").read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise FormatError(f"{d}: bad manifest: {exc}") from exc
        frames = [read_pgm(d / f"frame_{t:04d}.pgm") for t in range(int(manifest["frames"]))]
        truth = [(tuple(o), tuple(t)) for o, t in manifest["ground_truth"]]
        expert = ExpertConfig(step_size=manifest.get("step_size", 10.0), alpha=manifest["alpha"],
                              noise_seed=manifest.get("noise_seed", 0))
        demos.append(Demonstration(frames, truth, expert, bool(manifest.get("reached", True))))
    return demos


def train_model(cfg: ExperimentConfig, demos: Sequence[Demonstration]
                ) -> tuple[NetworkParams, LearningCurve, float]:
    """Train a fresh network on ``demos``; returns (net, curve, wall-clock seconds)."""
    dataset = build_transition_dataset(demos, cfg.side, cfg.seed)
    specs = nn_core.default_layer_specs(cfg.side * cfg.side, cfg.dof, cfg.hidden)
    net = nn_core.init_network(specs, cfg.seed)
    t0 = time.perf_counter()
    net, curve = train(dataset, net, replace(cfg.trainer, seed=cfg.seed))
    return net, curve, time.perf_counter() - t0


def task_function(cfg: ExperimentConfig, net: NetworkParams) -> LearnedTaskFunction:
    return LearnedTaskFunction(net, cfg.side, antisymmetric=cfg.feedback == "antisymmetric")


def trial_scene(cfg: ExperimentConfig, index: int, perturbation: Optional[Perturbation] = None):
    rng = np.random.default_rng(cfg.seed + index)
    camera = cfg.camera()
    scene = sample_start(rng, cfg.base_scene(), camera, cfg.scene.min_start_px,
                         cfg.scene.start_low, cfg.scene.start_high)
    if perturbation is not None:
        scene = apply_perturbation(scene, perturbation, camera)
    return scene


def run_trial(cfg: ExperimentConfig, taskfn, index: int,
              perturbation: Optional[Perturbation] = None) -> ExecutionTrace:
    """One closed-loop episode; ``taskfn`` sees only images."""
    env = SimEnv(trial_scene(cfg, index, perturbation), cfg.camera())
    ctrl = replace(cfg.controller, seed=cfg.seed + index)
    return run_execution(env, taskfn, ctrl, env.pixel_error)


# -- suites -----------------------------------------------------------------------

@dataclass
class SuiteRow:
    setting: str
    trials: int
    successes: int
    mean_error_px: Optional[float]
    std_error_px: Optional[float]
    mean_steps: Optional[float]
    train_seconds: float
    traces: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not 0 <= self.successes <= self.trials:
            raise ConfigError("successes must lie in [0, trials]")

    @property
    def success_label(self) -> str:
        return f"{self.successes}/{self.trials}"


@dataclass
class SuiteResult:
    rows: list = field(default_factory=list)

    def row(self, setting: str) -> SuiteRow:
        for r in self.rows:
            if r.setting == setting:
                return r
        raise KeyError(setting)

    def write_csv(self, path) -> None:
        def fmt(x):
            return "" if x is None else repr(float(x))

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["setting", "trials", "successes", "mean_error_px", "std_error_px",
                        "mean_steps", "train_seconds"])
            for r in self.rows:
                w.writerow([r.setting, r.trials, r.successes, fmt(r.mean_error_px),
                            fmt(r.std_error_px), fmt(r.mean_steps), f"{r.train_seconds:.3f}"])


def summarize(setting: str, traces: Sequence[ExecutionTrace], train_seconds: float) -> SuiteRow:
    """Mean and std of final error and mean steps over successful trials only."""
    ok = [t for t in traces if t.success]
    if ok:
        errs = np.array([t.final_error for t in ok])
        mean_err, std_err = float(errs.mean()), float(errs.std())
        mean_steps = float(np.mean([t.steps_used for t in ok]))
    else:
        mean_err = std_err = mean_steps = None
    return SuiteRow(setting, len(traces), len(ok), mean_err, std_err, mean_steps,
                    train_seconds, list(traces))


def run_setting(cfg: ExperimentConfig, taskfn, setting: str, train_seconds: float,
                perturbation: Optional[Perturbation] = None) -> SuiteRow:
    traces = [run_trial(cfg, taskfn, i, perturbation) for i in range(cfg.trials)]
    return summarize(setting, traces, train_seconds)


def evaluate_suite(cfg: ExperimentConfig, net: Optional[NetworkParams] = None,
                   train_seconds: float = math.nan,
                   demos: Optional[Sequence[Demonstration]] = None) -> SuiteResult:
    """Baseline plus each perturbation, or one row per entry of ``demo_counts``.

    Without ``net`` the model is trained here from ``demos`` (generated when
    absent).  Demo-count rows always train their own model on the first n
    generated demonstrations.
    """
    result = SuiteResult()
    if cfg.demo_counts:
        pool = list(demos) if demos is not None else generate_demos(cfg, max(cfg.demo_counts))
        if len(pool) < max(cfg.demo_counts):
            raise ConfigError(f"need {max(cfg.demo_counts)} demos, have {len(pool)}")
        for n in cfg.demo_counts:
            model, _, secs = train_model(cfg, pool[:n])
            result.rows.append(run_setting(cfg, task_function(cfg, model), f"demos={n}", secs))
        return result
    if net is None:
        model_demos = list(demos) if demos is not None else generate_demos(cfg)
        net, _, train_seconds = train_model(cfg, model_demos)
    taskfn = task_function(cfg, net)
    result.rows.append(run_setting(cfg, taskfn, "baseline", train_seconds))
    for p in cfg.perturbation_list():
        result.rows.append(run_setting(cfg, taskfn, p.name, train_seconds, p))
    return result


# -- reward field --------------------------------------------------------------------

@dataclass
class FieldSummary:
    center: tuple
    best_direction: np.ndarray
    best_reward: float
    true_direction: np.ndarray
    angle_deg: float


def probe_reward_field(cfg: ExperimentConfig, net: NetworkParams):
    """Reward field at every configured center plus its argmax-vs-truth summary."""
    scene, camera = cfg.base_scene(), cfg.camera()
    target = np.asarray(scene.target_pos, dtype=np.float64)
    fields_, summaries = [], []
    for c in cfg.sphere.centers:
        f = reward_field(net, scene, camera, c, cfg.sphere.n_dirs, cfg.sphere.step, cfg.side,
                         antisymmetric=cfg.sphere.antisymmetric)
        rewards = np.array([r for _, r in f])
        k = int(np.argmax(rewards))
        best = f[k][0]
        true = target - np.asarray(c)
        norm = np.linalg.norm(true)
        if norm == 0:
            raise ConfigError(f"probe center {c} coincides with the target")
        true = true / norm
        angle = math.degrees(math.acos(float(np.clip(best @ true, -1.0, 1.0))))
        fields_.append(f)
        summaries.append(FieldSummary(tuple(c), best, float(rewards[k]), true, angle))
    return fields_, summaries


def write_field_summary(summaries: Sequence[FieldSummary], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["center_x", "center_y", "center_z", "best_x", "best_y", "best_z",
                    "best_reward", "true_x", "true_y", "true_z", "angle_deg"])
        for s in summaries:
            w.writerow([*map(repr, map(float, s.center)), *map(repr, map(float, s.best_direction)),
                        repr(s.best_reward), *map(repr, map(float, s.true_direction)),
                        repr(s.angle_deg)])
