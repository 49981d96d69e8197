"""JSON experiment configuration with strict key checking.

Every section is optional; missing keys take the defaults below, unknown keys
are rejected so that a typo cannot silently fall back to a default.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional

from .errors import ConfigError
from .irl_trainer import TrainerConfig
from .sim_world import (CameraModel, ExpertConfig, Perturbation, Scene, scaled_threshold)
from .uvs_controller import ControllerConfig

# keys a user may set in each section; everything else is derived
_TRAINER_KEYS = ("alpha", "epochs", "learning_rate")
_EXPERT_KEYS = ("step_size", "stop_distance", "max_frames")
_CONTROLLER_KEYS = (
    "step_gain", "damping", "r_thres", "recalib_patience", "min_singular", "probe_eps",
    "probe_mode", "max_step", "shrink", "grow", "min_step", "broyden_eps_min", "max_steps",
    "success_threshold_px", "dt",
)
_NETWORK_KEYS = ("side", "hidden", "dof", "feedback")
_SCENE_KEYS = ("object_size", "target_size", "target_pos", "start_low", "start_high", "min_start_px")
_IMAGE_KEYS = ("width", "height")
_SPHERE_KEYS = ("centers", "n_dirs", "step", "antisymmetric")
_TOP_KEYS = (
    "task", "image", "network", "trainer", "controller", "expert", "scene", "sphere",
    "demos", "trials", "perturbations", "demo_counts", "execute_trial", "seed",
    "output_dir", "wall_clock",
)

DEFAULT_FIELD_CENTERS = (
    (70.0, 70.0, 10.0), (130.0, 70.0, 10.0), (70.0, 130.0, 10.0),
    (130.0, 130.0, 10.0), (100.0, 60.0, 15.0),
)

DEFAULT_PERTURBATIONS = (
    {"kind": "translate_rotate_target", "dx": 45.0, "dy": 0.0, "dtheta_deg": 20.0},
    {"kind": "background_swap", "background": ["checker", 16, 25, 45]},
    {"kind": "occlude_object", "fraction": 0.25},
    {"kind": "occlude_target", "fraction": 0.25},
    {"kind": "illumination_shift", "delta": 20},
    {"kind": "illumination_shift", "delta": -20},
)


@dataclass(frozen=True)
class SceneConfig:
    object_size: float = 48.0
    target_size: float = 60.0
    target_pos: tuple = (100.0, 100.0, 0.0)
    start_low: tuple = (60.0, 60.0, 0.0)
    start_high: tuple = (140.0, 140.0, 20.0)
    min_start_px: float = 10.0

    def __post_init__(self):
        for name in ("target_pos", "start_low", "start_high"):
            v = getattr(self, name)
            if len(v) != 3:
                raise ConfigError(f"scene.{name} must have 3 entries")
            object.__setattr__(self, name, tuple(float(x) for x in v))
        if any(lo > hi for lo, hi in zip(self.start_low, self.start_high)):
            raise ConfigError("scene.start_low must not exceed scene.start_high")
        if self.min_start_px < 0:
            raise ConfigError("scene.min_start_px must be non-negative")
        self.scene()  # validates sizes and positions

    def scene(self) -> Scene:
        return Scene(object_pos=self.start_low, target_pos=self.target_pos,
                     object_size=self.object_size, target_size=self.target_size)


@dataclass(frozen=True)
class SphereConfig:
    centers: tuple = DEFAULT_FIELD_CENTERS
    n_dirs: int = 200
    step: float = 10.0
    antisymmetric: bool = False

    def __post_init__(self):
        cs = tuple(tuple(float(x) for x in c) for c in self.centers)
        if not cs or any(len(c) != 3 for c in cs):
            raise ConfigError("sphere.centers must be a non-empty list of 3-vectors")
        object.__setattr__(self, "centers", cs)
        if self.n_dirs < 4:
            raise ConfigError("sphere.n_dirs must be >= 4")
        if self.step <= 0:
            raise ConfigError("sphere.step must be positive")


@dataclass(frozen=True)
class ExperimentConfig:
    task: str = "stack_blocks"
    image_w: int = 128
    image_h: int = 128
    side: int = 64
    hidden: tuple = (512, 256, 128, 64)
    dof: int = 3
    feedback: str = "antisymmetric"
    trainer: TrainerConfig = TrainerConfig(alpha=0.6, epochs=60, learning_rate=1e-4)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    expert: ExpertConfig = ExpertConfig(step_size=5.0)
    scene: SceneConfig = SceneConfig()
    sphere: SphereConfig = SphereConfig()
    demos: int = 11
    trials: int = 10
    perturbations: tuple = DEFAULT_PERTURBATIONS
    demo_counts: tuple = ()
    execute_trial: int = 0
    seed: int = 0
    output_dir: Optional[str] = None
    wall_clock: bool = False

    def __post_init__(self):
        if self.demos < 1:
            raise ConfigError("demos must be >= 1")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if any(int(n) < 1 for n in self.demo_counts):
            raise ConfigError("demo_counts entries must be >= 1")
        if self.image_w < 32 or self.image_h < 32:
            raise ConfigError("image dimensions must be >= 32")
        if self.side < 1 or self.side > min(self.image_w, self.image_h):
            raise ConfigError("network.side must lie in [1, min(image dims)]")
        if self.feedback not in ("antisymmetric", "raw"):
            raise ConfigError("network.feedback must be 'antisymmetric' or 'raw'")
        if self.dof != self.trainer.dof or self.dof != self.controller.dof:
            raise ConfigError("task dof disagrees between network, trainer and controller")
        if self.execute_trial < 0:
            raise ConfigError("execute_trial must be non-negative")
        if self.trainer.alpha != self.expert.alpha:
            raise ConfigError("expert and trainer must share alpha")

    @property
    def sigma0(self) -> float:
        return self.trainer.sigma0

    def camera(self) -> CameraModel:
        # keep the field of view fixed when the image size changes
        return CameraModel(focal_px=208.0 * self.image_w / 128.0,
                           image_w=self.image_w, image_h=self.image_h)

    def base_scene(self) -> Scene:
        return self.scene.scene()

    def perturbation_list(self) -> list[Perturbation]:
        return [Perturbation.from_dict(p) for p in self.perturbations]

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=int(seed))


def _check_keys(section: dict, allowed, where: str) -> None:
    if not isinstance(section, dict):
        raise ConfigError(f"{where or 'config'} must be a JSON object")
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        prefix = f"{where}." if where else ""
        raise ConfigError(f"unknown config key(s): {', '.join(prefix + k for k in unknown)}")


def _build(cls, values: dict, where: str, **extra):
    try:
        return cls(**values, **extra)
    except ConfigError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(raw: dict[str, Any]) -> ExperimentConfig:
    """Resolve a parsed JSON document into a validated configuration."""
    _check_keys(raw, _TOP_KEYS, "")
    sections = {}
    for name, keys in (("image", _IMAGE_KEYS), ("network", _NETWORK_KEYS),
                       ("trainer", _TRAINER_KEYS), ("controller", _CONTROLLER_KEYS),
                       ("expert", _EXPERT_KEYS), ("scene", _SCENE_KEYS), ("sphere", _SPHERE_KEYS)):
        sec = raw.get(name, {})
        _check_keys(sec, keys, name)
        sections[name] = dict(sec)

    defaults = ExperimentConfig()
    net = sections["network"]
    image = sections["image"]
    dof = int(net.get("dof", defaults.dof))
    width = int(image.get("width", defaults.image_w))

    trainer_vals = {"alpha": defaults.trainer.alpha, "epochs": defaults.trainer.epochs,
                    "learning_rate": defaults.trainer.learning_rate, **sections["trainer"]}
    trainer = _build(TrainerConfig, trainer_vals, "trainer", dof=dof)

    expert_vals = {"step_size": defaults.expert.step_size, **sections["expert"]}
    expert = _build(ExpertConfig, expert_vals, "expert", alpha=trainer.alpha)

    ctrl_vals = dict(sections["controller"])
    ctrl_vals.setdefault("success_threshold_px", scaled_threshold(width))
    if ctrl_vals.get("r_thres") is not None:
        ctrl_vals["r_thres"] = tuple(float(x) for x in ctrl_vals["r_thres"])
    controller = _build(ControllerConfig, ctrl_vals, "controller", dof=dof)

    scene = _build(SceneConfig, sections["scene"], "scene")
    sphere = _build(SphereConfig, sections["sphere"], "sphere")

    perts = tuple(raw.get("perturbations", DEFAULT_PERTURBATIONS))
    for i, p in enumerate(perts):
        try:
            Perturbation.from_dict(p)
        except ConfigError as exc:
            raise ConfigError(f"perturbations[{i}]: {exc}") from exc

    top = {k: raw[k] for k in ("task", "demos", "trials", "execute_trial", "seed",
                               "output_dir", "wall_clock") if k in raw}
    if "hidden" in net:
        net["hidden"] = tuple(int(h) for h in net["hidden"])
    return _build(
        ExperimentConfig,
        {
            **top,
            "image_w": width,
            "image_h": int(image.get("height", defaults.image_h)),
            **net,
            "dof": dof,
            "trainer": trainer,
            "controller": controller,
            "expert": expert,
            "scene": scene,
            "sphere": sphere,
            "perturbations": perts,
            "demo_counts": tuple(int(n) for n in raw.get("demo_counts", ())),
        },
        "config",
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: malformed JSON: {exc.msg}") from exc
    return config_from_dict(raw)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Plain-JSON view of a resolved configuration (round-trips through config_from_dict)."""
    ctrl = {k: getattr(cfg.controller, k) for k in _CONTROLLER_KEYS}
    if ctrl["r_thres"] is not None:
        ctrl["r_thres"] = list(ctrl["r_thres"])
    return {
        "task": cfg.task,
        "image": {"width": cfg.image_w, "height": cfg.image_h},
        "network": {"side": cfg.side, "hidden": list(cfg.hidden), "dof": cfg.dof,
                    "feedback": cfg.feedback},
        "trainer": {k: getattr(cfg.trainer, k) for k in _TRAINER_KEYS},
        "controller": ctrl,
        "expert": {k: getattr(cfg.expert, k) for k in _EXPERT_KEYS},
        "scene": {k: (list(v) if isinstance(v, tuple) else v)
                  for k, v in ((f.name, getattr(cfg.scene, f.name)) for f in fields(SceneConfig))},
        "sphere": {"centers": [list(c) for c in cfg.sphere.centers], "n_dirs": cfg.sphere.n_dirs,
                   "step": cfg.sphere.step, "antisymmetric": cfg.sphere.antisymmetric},
        "demos": cfg.demos,
        "trials": cfg.trials,
        "perturbations": [dict(p) for p in cfg.perturbations],
        "demo_counts": list(cfg.demo_counts),
        "execute_trial": cfg.execute_trial,
        "seed": cfg.seed,
        "output_dir": cfg.output_dir,
        "wall_clock": cfg.wall_clock,
    }
