"""Desk-scale stand-in for a webcam watching a robot stack one block on another.

World units are millimetre-like.  A 3-DOF Cartesian carrier moves the object
block; its joint axes are related to world axes by a fixed rotation and scale
that only this module knows.  The controller side sees the world exclusively
through :class:`SimEnv.step` and :class:`SimEnv.render`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, NumericError, OutOfViewError
from .vision_state import ImageState

WORKSPACE = 200.0

BACKGROUND_LEVEL = 30
TARGET_LEVEL = 200
OBJECT_LEVEL = 120
OCCLUDER_LEVEL = 80
CHECKER = ("checker", 16, 25, 45)

IMAGE_SIZE = 128
REFERENCE_IMAGE_SIZE = 580
REFERENCE_THRESHOLD_PX = 20.0


def scaled_threshold(image_size: int = IMAGE_SIZE) -> float:
    """Success threshold scaled from 20 px at 580x580 to ``image_size``."""
    return REFERENCE_THRESHOLD_PX * image_size / REFERENCE_IMAGE_SIZE


def _vec3(v) -> tuple:
    a = np.asarray(v, dtype=np.float64).reshape(3)
    return tuple(float(x) for x in a)


def _rot_z(deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _rot_x(deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


# joint axes -> world displacement; never handed to the controller
_MOUNT = 1.15 * _rot_z(32.0) @ _rot_x(-12.0)
ALIGNED_MOUNT = np.eye(3)


# -- scene ---------------------------------------------------------------------

@dataclass(frozen=True)
class Occluder:
    x0: int
    y0: int
    x1: int
    y1: int
    level: int = OCCLUDER_LEVEL


@dataclass(frozen=True)
class Scene:
    object_pos: tuple = (60.0, 60.0, 30.0)
    target_pos: tuple = (100.0, 100.0, 0.0)
    object_yaw: float = 0.0
    target_yaw: float = 0.0
    object_size: float = 48.0
    target_size: float = 60.0
    # an int gray level, or ("checker", cell_px, level_a, level_b)
    background: object = BACKGROUND_LEVEL
    illumination_offset: int = 0
    occluders: tuple = ()
    workspace: float = WORKSPACE

    def __post_init__(self):
        object.__setattr__(self, "object_pos", _vec3(self.object_pos))
        object.__setattr__(self, "target_pos", _vec3(self.target_pos))
        object.__setattr__(self, "occluders", tuple(self.occluders))
        for name in ("object_pos", "target_pos"):
            p = getattr(self, name)
            if not all(0.0 <= c <= self.workspace for c in p):
                raise ConfigError(f"{name} {p} outside workspace [0, {self.workspace}]^3")
        if self.object_size <= 0 or self.target_size <= 0:
            raise ConfigError("block sizes must be positive")
        if not -255 <= self.illumination_offset <= 255:
            raise ConfigError("illumination_offset must lie in [-255, 255]")
        bg = self.background
        if isinstance(bg, (list, tuple)):
            if len(bg) != 4 or bg[0] != "checker" or int(bg[1]) < 1:
                raise ConfigError(f"bad background spec {bg!r}")
            object.__setattr__(self, "background", tuple(bg))
        elif not 0 <= int(bg) <= 255:
            raise ConfigError(f"background level {bg} outside 0..255")


@dataclass(frozen=True)
class CameraModel:
    eye: tuple = (100.0, -40.0, 300.0)
    look_at: tuple = (100.0, 100.0, 0.0)
    up: tuple = (0.0, 1.0, 0.0)
    focal_px: float = 208.0
    image_w: int = IMAGE_SIZE
    image_h: int = IMAGE_SIZE

    def __post_init__(self):
        object.__setattr__(self, "eye", _vec3(self.eye))
        object.__setattr__(self, "look_at", _vec3(self.look_at))
        object.__setattr__(self, "up", _vec3(self.up))
        if self.image_w < 32 or self.image_h < 32:
            raise ConfigError("image dimensions must be at least 32")
        if self.focal_px <= 0:
            raise ConfigError("focal_px must be positive")
        fwd = np.subtract(self.look_at, self.eye)
        if np.linalg.norm(fwd) < 1e-9:
            raise ConfigError("camera eye coincides with look_at")
        if np.linalg.norm(np.cross(fwd, self.up)) < 1e-9 * np.linalg.norm(fwd):
            raise ConfigError("camera up vector is parallel to the viewing direction")

    def basis(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        f = np.subtract(self.look_at, self.eye)
        f = f / np.linalg.norm(f)
        r = np.cross(f, self.up)
        r = r / np.linalg.norm(r)
        d = np.cross(f, r)
        return r, d, f

    def project(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Pixel coordinates (u right, v down) and depth of world points."""
        p = np.atleast_2d(np.asarray(points, dtype=np.float64)) - np.asarray(self.eye)
        r, d, f = self.basis()
        depth = p @ f
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.image_w / 2.0 + self.focal_px * (p @ r) / depth
            v = self.image_h / 2.0 + self.focal_px * (p @ d) / depth
        return np.stack([u, v], axis=1), depth


def block_corners(pos, yaw: float, size: float) -> np.ndarray:
    """Corners of a block's square top face, counter-clockwise in world xy."""
    h = size / 2.0
    local = np.array([[-h, -h], [h, -h], [h, h], [-h, h]])
    c, s = math.cos(yaw), math.sin(yaw)
    xy = local @ np.array([[c, s], [-s, c]]) + np.asarray(pos[:2])
    return np.column_stack([xy, np.full(4, pos[2])])


def _projected_quad(camera: CameraModel, pos, yaw, size) -> Optional[np.ndarray]:
    uv, depth = camera.project(block_corners(pos, yaw, size))
    if np.any(depth <= 1e-6):
        return None
    return uv


def _quad_bbox(quad: np.ndarray, w: int, h: int):
    x0 = max(int(math.floor(quad[:, 0].min())), 0)
    x1 = min(int(math.ceil(quad[:, 0].max())), w)
    y0 = max(int(math.floor(quad[:, 1].min())), 0)
    y1 = min(int(math.ceil(quad[:, 1].max())), h)
    if x0 >= x1 or y0 >= y1:
        return None
    return x0, y0, x1, y1


def _coverage(quad: np.ndarray, w: int, h: int, ss: int):
    """Per-pixel area fraction of a convex quad, estimated on an ss x ss grid."""
    box = _quad_bbox(quad, w, h)
    if box is None:
        return None, None
    x0, y0, x1, y1 = box
    off = (np.arange(ss) + 0.5) / ss
    xs = (np.arange(x0, x1)[:, None] + off[None, :]).ravel()
    ys = (np.arange(y0, y1)[:, None] + off[None, :]).ravel()
    X, Y = np.meshgrid(xs, ys)
    area2 = np.sum(quad[:, 0] * np.roll(quad[:, 1], -1) - np.roll(quad[:, 0], -1) * quad[:, 1])
    q = quad if area2 >= 0 else quad[::-1]
    inside = np.ones(X.shape, dtype=bool)
    for k in range(4):
        ax, ay = q[k]
        bx, by = q[(k + 1) % 4]
        inside &= (bx - ax) * (Y - ay) - (by - ay) * (X - ax) >= 0
    cov = inside.reshape(y1 - y0, ss, x1 - x0, ss).mean(axis=(1, 3))
    return box, cov


def _background(scene: Scene, w: int, h: int) -> np.ndarray:
    bg = scene.background
    if isinstance(bg, tuple):
        _, cell, a, b = bg
        ii, jj = np.indices((h, w))
        return np.where(((ii // cell) + (jj // cell)) % 2 == 0, float(a), float(b))
    return np.full((h, w), float(bg))


def render(scene: Scene, camera: CameraModel, supersample: int = 4) -> ImageState:
    w, h = camera.image_w, camera.image_h
    img = _background(scene, w, h)
    blocks = (
        (scene.target_pos, scene.target_yaw, scene.target_size, TARGET_LEVEL),
        (scene.object_pos, scene.object_yaw, scene.object_size, OBJECT_LEVEL),
    )
    for pos, yaw, size, level in blocks:
        quad = _projected_quad(camera, pos, yaw, size)
        if quad is None:
            continue
        box, cov = _coverage(quad, w, h, supersample)
        if box is None:
            continue
        x0, y0, x1, y1 = box
        region = img[y0:y1, x0:x1]
        img[y0:y1, x0:x1] = region * (1.0 - cov) + level * cov
    for occ in scene.occluders:
        img[max(occ.y0, 0):min(occ.y1, h), max(occ.x0, 0):min(occ.x1, w)] = occ.level
    img = np.clip(img + scene.illumination_offset, 0.0, 255.0)
    return ImageState(np.rint(img).astype(np.uint8))


def projected_bbox(scene: Scene, camera: CameraModel, which: str = "object"):
    """Clipped integer pixel bbox ``(x0, y0, x1, y1)`` of a block, or None."""
    if which == "object":
        quad = _projected_quad(camera, scene.object_pos, scene.object_yaw, scene.object_size)
    else:
        quad = _projected_quad(camera, scene.target_pos, scene.target_yaw, scene.target_size)
    if quad is None:
        return None
    return _quad_bbox(quad, camera.image_w, camera.image_h)


def pixel_error(scene: Scene, camera: CameraModel) -> float:
    """Pixel distance between projected object and target centres."""
    for which in ("object", "target"):
        if projected_bbox(scene, camera, which) is None:
            raise OutOfViewError(f"{which} block is out of view")
    uv, _ = camera.project([scene.object_pos, scene.target_pos])
    return float(np.linalg.norm(uv[0] - uv[1]))


# -- robot ---------------------------------------------------------------------

@dataclass(frozen=True)
class RobotState:
    q: tuple = (0.0, 0.0, 0.0)
    lower: tuple = (-150.0, -150.0, -150.0)
    upper: tuple = (150.0, 150.0, 150.0)

    def __post_init__(self):
        for name in ("q", "lower", "upper"):
            object.__setattr__(self, name, _vec3(getattr(self, name)))
        q, lo, hi = map(np.asarray, (self.q, self.lower, self.upper))
        if np.any(lo > hi) or np.any(q < lo - 1e-9) or np.any(q > hi + 1e-9):
            raise ConfigError(f"joint state {self.q} outside limits")


def step_robot(scene: Scene, robot: RobotState, qdot, dt: float,
               mount: Optional[np.ndarray] = None) -> tuple[Scene, RobotState]:
    """Integrate a joint velocity; the object follows through the hidden mount.

    Joint limits clamp each axis.  The object slides along workspace walls: a
    motion that would leave the box is projected back onto it and the joints
    follow, so the object displacement is always ``mount @ (q' - q)``.
    """
    qdot = np.asarray(qdot, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(qdot)) or not math.isfinite(dt):
        raise NumericError("non-finite joint command")
    m = _MOUNT if mount is None else np.asarray(mount, dtype=np.float64)
    lo, hi = np.asarray(robot.lower), np.asarray(robot.upper)
    q = np.asarray(robot.q)
    q_new = np.clip(q + qdot * dt, lo, hi)
    pos = np.asarray(scene.object_pos)
    want = pos + m @ (q_new - q)
    inside = np.clip(want, 0.0, scene.workspace)
    if not np.array_equal(inside, want):
        q_new = q + np.linalg.solve(m, inside - pos)
        if np.any(q_new < lo) or np.any(q_new > hi):
            # wall and joint limit both active: give up on the wall slide
            q_new = q
    new_pos = pos + m @ (q_new - q)
    return replace(scene, object_pos=np.clip(new_pos, 0.0, scene.workspace)), replace(robot, q=q_new)


# -- expert demonstrations -----------------------------------------------------

@dataclass(frozen=True)
class ExpertConfig:
    step_size: float = 10.0
    alpha: float = 0.6
    stop_distance: float = 4.0
    max_frames: int = 20
    noise_seed: int = 0

    def __post_init__(self):
        if self.step_size <= 0:
            raise ConfigError("expert step_size must be positive")
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError("expert alpha must lie in (0, 1]")
        if self.stop_distance < 0:
            raise ConfigError("stop_distance must be non-negative")
        if self.max_frames < 2:
            raise ConfigError("max_frames must be at least 2")


@dataclass
class Demonstration:
    frames: list
    ground_truth: list  # per frame: (object_pos, target_pos)
    expert: ExpertConfig
    reached: bool = True

    def __post_init__(self):
        if len(self.frames) < 2 or len(self.ground_truth) != len(self.frames):
            raise ConfigError("demonstration needs >= 2 frames and matching ground truth")


def generate_demonstration(scene: Scene, camera: CameraModel,
                           expert: ExpertConfig) -> Demonstration:
    """Scripted expert sliding the object toward the target, one move per frame.

    Each move is ``min(step, distance)`` along the unit vector to the target
    plus Gaussian noise with per-axis sigma ``(1 - alpha) * step``.
    """
    for which in ("object", "target"):
        if projected_bbox(scene, camera, which) is None:
            raise ConfigError(f"{which} block not visible at demonstration start")
    rng = np.random.default_rng(expert.noise_seed)
    sigma = (1.0 - expert.alpha) * expert.step_size
    target = np.asarray(scene.target_pos)
    frames = [render(scene, camera)]
    truth = [(scene.object_pos, scene.target_pos)]
    reached = np.linalg.norm(np.asarray(scene.object_pos) - target) <= expert.stop_distance
    while not reached and len(frames) < expert.max_frames:
        pos = np.asarray(scene.object_pos)
        gap = target - pos
        dist = float(np.linalg.norm(gap))
        move = gap / dist * min(expert.step_size, dist) if dist > 0 else np.zeros(3)
        noise = rng.normal(0.0, 1.0, 3) * sigma
        new_pos = np.clip(pos + move + noise, 0.0, scene.workspace)
        scene = replace(scene, object_pos=new_pos)
        frames.append(render(scene, camera))
        truth.append((scene.object_pos, scene.target_pos))
        reached = float(np.linalg.norm(new_pos - target)) <= expert.stop_distance
    return Demonstration(frames, truth, expert, bool(reached))


def sample_start(rng: np.random.Generator, scene: Scene, camera: CameraModel,
                 min_px: float = 25.0, low=(30.0, 30.0, 0.0),
                 high=(170.0, 170.0, 60.0)) -> Scene:
    """Scene copy with the object at a random visible start away from the target."""
    for _ in range(1000):
        pos = rng.uniform(low, high)
        cand = replace(scene, object_pos=pos)
        try:
            if pixel_error(cand, camera) >= min_px and _fully_visible(cand, camera):
                return cand
        except OutOfViewError:
            pass
    raise ConfigError("could not sample a visible start position")


def _fully_visible(scene: Scene, camera: CameraModel) -> bool:
    quad = _projected_quad(camera, scene.object_pos, scene.object_yaw, scene.object_size)
    if quad is None:
        return False
    return bool(
        quad[:, 0].min() >= 0 and quad[:, 1].min() >= 0
        and quad[:, 0].max() <= camera.image_w and quad[:, 1].max() <= camera.image_h
    )


# -- perturbations -------------------------------------------------------------

@dataclass(frozen=True)
class Perturbation:
    kind: str
    dx: float = 0.0
    dy: float = 0.0
    dtheta_deg: float = 0.0
    background: object = None
    fraction: float = 0.0
    delta: int = 0

    KINDS = ("translate_rotate_target", "background_swap", "occlude_object",
             "occlude_target", "illumination_shift")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ConfigError(f"unknown perturbation kind {self.kind!r}")
        if not 0.0 <= self.fraction <= 1.0:
            raise ConfigError(f"occlusion fraction {self.fraction} outside [0, 1]")
        if not -255 <= self.delta <= 255:
            raise ConfigError(f"illumination delta {self.delta} outside [-255, 255]")
        if self.kind == "background_swap" and self.background is None:
            raise ConfigError("background_swap needs a background spec")

    @property
    def name(self) -> str:
        if self.kind == "translate_rotate_target":
            return f"translate_rotate_target({self.dx:g},{self.dy:g},{self.dtheta_deg:g})"
        if self.kind == "background_swap":
            bg = self.background
            return f"background_swap({bg[0] if isinstance(bg, tuple) else bg})"
        if self.kind in ("occlude_object", "occlude_target"):
            return f"{self.kind}({self.fraction:g})"
        return f"illumination_shift({self.delta:+d})"

    @classmethod
    def from_dict(cls, d: dict) -> "Perturbation":
        d = dict(d)
        if isinstance(d.get("background"), list):
            d["background"] = tuple(d["background"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad perturbation {d}: {exc}") from exc


def apply_perturbation(scene: Scene, p: Perturbation,
                       camera: Optional[CameraModel] = None) -> Scene:
    """Modified copy of ``scene``; occlusions need ``camera`` to place the patch."""
    if p.kind == "translate_rotate_target":
        t = np.asarray(scene.target_pos) + np.array([p.dx, p.dy, 0.0])
        return replace(scene, target_pos=t,
                       target_yaw=scene.target_yaw + math.radians(p.dtheta_deg))
    if p.kind == "background_swap":
        return replace(scene, background=p.background)
    if p.kind == "illumination_shift":
        offset = int(np.clip(scene.illumination_offset + p.delta, -255, 255))
        return replace(scene, illumination_offset=offset)
    if camera is None:
        raise ConfigError(f"{p.kind} needs a camera to place the occluder")
    which = "object" if p.kind == "occlude_object" else "target"
    box = projected_bbox(scene, camera, which)
    if box is None or p.fraction == 0.0:
        return scene
    x0, y0, x1, y1 = box
    width = int(round(p.fraction * (x1 - x0)))
    if width == 0:
        return scene
    occ = Occluder(x0, y0, x0 + width, y1)
    return replace(scene, occluders=scene.occluders + (occ,))


# -- environment handle ----------------------------------------------------------

class SimEnv:
    """Episode state behind the two calls a controller may use: step and render.

    ``pixel_error`` and ``ground_truth`` exist for evaluation and oracles; the
    controller never receives them.
    """

    def __init__(self, scene: Scene, camera: CameraModel, robot: Optional[RobotState] = None,
                 mount: Optional[np.ndarray] = None, dt: float = 1.0):
        self._scene = scene
        self._camera = camera
        self._robot = robot or RobotState()
        self._mount = _MOUNT if mount is None else np.asarray(mount, dtype=np.float64)
        self._dt = dt
        self.steps = 0
        self.last_motion = (scene.object_pos, scene.object_pos)

    def step(self, dq) -> None:
        before = self._scene.object_pos
        self._scene, self._robot = step_robot(
            self._scene, self._robot, np.asarray(dq, dtype=np.float64) / self._dt,
            self._dt, self._mount,
        )
        self.steps += 1
        self.last_motion = (before, self._scene.object_pos)

    def render(self) -> ImageState:
        return render(self._scene, self._camera)

    # evaluation-only surface
    def pixel_error(self) -> float:
        return pixel_error(self._scene, self._camera)

    def ground_truth(self) -> tuple[tuple, tuple]:
        return self._scene.object_pos, self._scene.target_pos

    @property
    def scene(self) -> Scene:
        return self._scene

    @property
    def joints(self) -> tuple:
        return self._robot.q


class ProgressOracle:
    """Task function computed from ground truth instead of pixels.

    Every component equals the decrease in object-to-target distance over the
    last environment step divided by ``step_size``, clipped to [-1, 1].  It
    takes learning out of the loop when testing the controller.
    """

    def __init__(self, env: SimEnv, step_size: float = 10.0, dof: int = 3):
        if step_size <= 0:
            raise ConfigError("oracle step_size must be positive")
        self.env = env
        self.step_size = step_size
        self.dof = dof

    def __call__(self, prev: ImageState, nxt: ImageState) -> np.ndarray:
        before, after = (np.asarray(p, dtype=np.float64) for p in self.env.last_motion)
        target = np.asarray(self.env.ground_truth()[1], dtype=np.float64)
        progress = np.linalg.norm(before - target) - np.linalg.norm(after - target)
        return np.full(self.dof, np.clip(progress / self.step_size, -1.0, 1.0))
