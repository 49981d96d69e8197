"""Image states, modular-subtraction state changes and training pairs."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, FormatError, ShapeError, UsageError

log = logging.getLogger(__name__)

FORWARD = "forward"
INVERSE = "inverse"
DEFAULT_SIDE = 64


@dataclass(frozen=True, eq=False)
class ImageState:
    """8-bit grayscale frame stored as an (height, width) uint8 array."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.size == 0:
            raise ShapeError(f"image must be a non-empty 2-D array, got shape {px.shape}")
        px = np.ascontiguousarray(px, dtype=np.uint8)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def __eq__(self, other):
        return isinstance(other, ImageState) and np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True, eq=False)
class StateChange:
    pixels: np.ndarray
    direction: str = FORWARD

    def __post_init__(self):
        px = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)
        if self.direction not in (FORWARD, INVERSE):
            raise UsageError(f"direction must be forward or inverse, got {self.direction!r}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def __eq__(self, other):
        return (
            isinstance(other, StateChange)
            and self.direction == other.direction
            and np.array_equal(self.pixels, other.pixels)
        )


def modular_subtract(s_next: ImageState, s_prev: ImageState) -> StateChange:
    """Pixelwise ``(next - prev) mod 256``."""
    if s_next.pixels.shape != s_prev.pixels.shape:
        raise ShapeError(f"frame shapes differ: {s_next.pixels.shape} vs {s_prev.pixels.shape}")
    # uint8 arithmetic wraps modulo 256
    return StateChange(s_next.pixels - s_prev.pixels, FORWARD)


def inverse_change(ds: StateChange) -> StateChange:
    if ds.direction != FORWARD:
        raise UsageError("inverse_change expects a forward state change")
    return StateChange(np.uint8(0) - ds.pixels, INVERSE)


def preprocess(ds: StateChange, side: int = DEFAULT_SIDE) -> np.ndarray:
    """Box-average a state change down to ``side x side`` and scale to [0, 1].

    Images whose size is not a multiple of ``side`` are padded on the bottom
    and right by edge replication first.
    """
    side = int(side)
    if side <= 0:
        raise ConfigError(f"side must be positive, got {side}")
    h, w = ds.pixels.shape
    bh = -(-h // side)
    bw = -(-w // side)
    px = ds.pixels.astype(np.float64)
    if bh * side != h or bw * side != w:
        px = np.pad(px, ((0, bh * side - h), (0, bw * side - w)), mode="edge")
    boxes = px.reshape(side, bh, side, bw).mean(axis=(1, 3))
    return (boxes / 255.0).ravel()


@dataclass
class TransitionDataset:
    x_plus: np.ndarray  # (n, side*side)
    x_minus: np.ndarray
    sources: list[tuple[int, int]]  # (demo index, frame index t) per pair
    seed: int
    side: int
    skipped_demos: int = 0

    def __len__(self) -> int:
        return self.x_plus.shape[0]

    @property
    def input_dim(self) -> int:
        return self.x_plus.shape[1]


def transition_inputs(s_prev: ImageState, s_next: ImageState, side: int = DEFAULT_SIDE):
    """Network inputs for the observed change and its inverse."""
    ds = modular_subtract(s_next, s_prev)
    return preprocess(ds, side), preprocess(inverse_change(ds), side)


def build_transition_dataset(demos: Sequence, side: int = DEFAULT_SIDE,
                             seed: int = 0) -> TransitionDataset:
    """One (x+, x-) pair per consecutive frame pair, shuffled by ``seed``.

    ``demos`` are any objects with a ``frames`` sequence of ImageState.
    """
    plus, minus, sources = [], [], []
    skipped = 0
    for i, demo in enumerate(demos):
        frames = demo.frames
        if len(frames) < 2:
            skipped += 1
            continue
        for t in range(len(frames) - 1):
            xp, xm = transition_inputs(frames[t], frames[t + 1], side)
            plus.append(xp)
            minus.append(xm)
            sources.append((i, t))
    if skipped:
        log.warning("skipped %d demonstration(s) with fewer than 2 frames", skipped)
    n = len(plus)
    order = np.random.default_rng(seed).permutation(n)
    dim = side * side
    x_plus = np.array(plus).reshape(n, dim)[order] if n else np.zeros((0, dim))
    x_minus = np.array(minus).reshape(n, dim)[order] if n else np.zeros((0, dim))
    return TransitionDataset(
        x_plus, x_minus, [sources[k] for k in order], seed, side, skipped
    )


# -- PGM I/O -----------------------------------------------------------------

def write_pgm(image: ImageState, path) -> None:
    header = f"P5\n{image.width} {image.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + image.pixels.tobytes())


def read_pgm(path) -> ImageState:
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (P5)")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 is supported")
    body = data[pos + 1:]
    if len(body) != w * h:
        raise FormatError(f"{path}: expected {w * h} pixel bytes, found {len(body)}")
    return ImageState(np.frombuffer(body, dtype=np.uint8).reshape(h, w))
