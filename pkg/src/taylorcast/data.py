"""Synthetic video data: bouncing-shapes clips, smooth scalar fields, clip io.

Scenes are defined in continuous time: shape centers follow p(t) = p0 + v*t
folded back into the frame by elastic reflection, and frames are rasterized
with analytic per-pixel area coverage.  Frames at fractional times are
therefore first-class, which is what the continuous-prediction experiments
need for ground truth.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .seeding import rng_for
from .tensor import Tensor, load_tensor, save_tensor

SHAPE_KINDS = ("disc", "square", "cross")


@dataclass
class VideoClip:
    """Frames [C, T, H, W] in [0, 1] sampled every ``dt`` from ``origin_time``."""

    frames: np.ndarray
    dt: float = 1.0
    origin_time: float = 0.0

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 4:
            raise ValueError(f"clip frames must be [C, T, H, W], got {self.frames.shape}")
        if self.frames.shape[1] < 1:
            raise ValueError("clip must contain at least one frame")
        lo, hi = float(self.frames.min()), float(self.frames.max())
        if lo < -1e-9 or hi > 1 + 1e-9:
            raise ValueError(f"pixel values outside [0, 1]: range [{lo:g}, {hi:g}]")
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    @property
    def length(self) -> int:
        return self.frames.shape[1]

    def frame_times(self) -> np.ndarray:
        return self.origin_time + self.dt * np.arange(self.length)


@dataclass(frozen=True)
class ShapeSceneSpec:
    """Bouncing-shapes scene; unset per-shape attributes are drawn from ``seed``."""

    n_shapes: int = 2
    grid: tuple[int, int] = (32, 32)
    kinds: tuple[str, ...] = SHAPE_KINDS
    velocities: tuple[tuple[float, float], ...] | None = None
    sizes: tuple[float, ...] | None = None
    speed_range: tuple[float, float] = (0.7, 1.6)
    size_range: tuple[float, float] = (3.0, 5.0)
    seed: int = 0

    def __post_init__(self):
        if self.n_shapes < 1:
            raise ValueError("need at least one shape")
        for kind in self.kinds:
            if kind not in SHAPE_KINDS:
                raise ValueError(f"unknown shape kind {kind!r}")
        if self.velocities is not None and len(self.velocities) != self.n_shapes:
            raise ValueError("velocities must list one (vy, vx) pair per shape")
        if self.sizes is not None and len(self.sizes) != self.n_shapes:
            raise ValueError("sizes must list one extent per shape")


@dataclass(frozen=True)
class _Shape:
    kind: str
    size: float  # radius / half-side / arm half-length
    p0: tuple[float, float]
    velocity: tuple[float, float]


def realize_scene(spec: ShapeSceneSpec) -> list[_Shape]:
    """Deterministically resolve randomized shape attributes from the seed."""
    rng = rng_for(spec.seed, "moving-shapes")
    h, w = spec.grid
    shapes = []
    for i in range(spec.n_shapes):
        kind = spec.kinds[int(rng.integers(len(spec.kinds)))]
        size = float(spec.sizes[i]) if spec.sizes is not None else float(rng.uniform(*spec.size_range))
        margin = _shape_margin(kind, size)
        if 2 * margin >= min(h, w):
            raise ValueError(f"shape of extent {margin:.1f} does not fit the {h}x{w} grid")
        p0 = (float(rng.uniform(margin, h - margin)), float(rng.uniform(margin, w - margin)))
        if spec.velocities is not None:
            velocity = (float(spec.velocities[i][0]), float(spec.velocities[i][1]))
        else:
            speed = rng.uniform(*spec.speed_range)
            angle = rng.uniform(0.0, 2.0 * math.pi)
            velocity = (float(speed * math.sin(angle)), float(speed * math.cos(angle)))
        shapes.append(_Shape(kind, size, p0, velocity))
    return shapes


def _shape_margin(kind: str, size: float) -> float:
    if kind == "disc":
        return size + 0.5
    if kind == "square":
        return size
    return size  # cross arm half-length


def _fold(x: np.ndarray | float, lo: float, hi: float):
    """Reflect positions into [lo, hi] (elastic bounce as a triangle wave)."""
    span = hi - lo
    if span <= 0:
        raise ValueError("reflection interval is empty")
    m = np.mod(np.asarray(x, dtype=np.float64) - lo, 2.0 * span)
    return lo + span - np.abs(m - span)


def shape_center(shape: _Shape, t: float, grid: tuple[int, int]) -> tuple[float, float]:
    h, w = grid
    margin = _shape_margin(shape.kind, shape.size)
    cy = float(_fold(shape.p0[0] + shape.velocity[0] * t, margin, h - margin))
    cx = float(_fold(shape.p0[1] + shape.velocity[1] * t, margin, w - margin))
    return cy, cx


def _interval_overlap(center: float, half: float, n: int) -> np.ndarray:
    """Coverage of [center-half, center+half] over each unit pixel [j, j+1)."""
    edges = np.arange(n, dtype=np.float64)
    return np.clip(np.minimum(center + half, edges + 1.0) - np.maximum(center - half, edges), 0.0, 1.0)


def _rasterize_shape(shape: _Shape, cy: float, cx: float, grid: tuple[int, int]) -> np.ndarray:
    h, w = grid
    if shape.kind == "disc":
        yy = np.arange(h)[:, None] + 0.5
        xx = np.arange(w)[None, :] + 0.5
        dist = np.hypot(yy - cy, xx - cx)
        return np.clip(shape.size + 0.5 - dist, 0.0, 1.0)
    if shape.kind == "square":
        return np.outer(_interval_overlap(cy, shape.size, h), _interval_overlap(cx, shape.size, w))
    # cross: union of a horizontal and a vertical bar (exact rectangle coverage)
    arm = shape.size
    thick = max(shape.size / 3.0, 0.6)
    horiz = np.outer(_interval_overlap(cy, thick, h), _interval_overlap(cx, arm, w))
    vert = np.outer(_interval_overlap(cy, arm, h), _interval_overlap(cx, thick, w))
    inter = np.outer(_interval_overlap(cy, thick, h), _interval_overlap(cx, thick, w))
    return horiz + vert - inter


def fractional_ground_truth(spec: ShapeSceneSpec, t: float) -> np.ndarray:
    """Frame [1, H, W] of the continuous scene at real-valued time ``t``."""
    shapes = realize_scene(spec)
    return _render(shapes, t, spec.grid)


def _render(shapes: list[_Shape], t: float, grid: tuple[int, int]) -> np.ndarray:
    frame = np.zeros(grid, dtype=np.float64)
    for shape in shapes:
        cy, cx = shape_center(shape, t, grid)
        frame = np.maximum(frame, _rasterize_shape(shape, cy, cx, grid))
    return frame[None]


def generate_moving_shapes(spec: ShapeSceneSpec, total_frames: int, dt: float = 1.0) -> VideoClip:
    """Clip of ``total_frames`` frames sampled at times 0, dt, 2*dt, ..."""
    if total_frames < 1:
        raise ValueError("total_frames must be >= 1")
    shapes = realize_scene(spec)
    frames = np.stack([_render(shapes, i * dt, spec.grid) for i in range(total_frames)], axis=1)
    return VideoClip(frames=frames, dt=dt, origin_time=0.0)


# ---------------------------------------------------------------------------
# Smooth scalar fields (sea-surface-temperature analog)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScalarFieldSpec:
    """Sum of drifting 2-D Gaussians with slowly varying amplitudes."""

    grid: tuple[int, int] = (32, 32)
    n_blobs: int = 3
    sigma_range: tuple[float, float] = (3.0, 6.0)
    speed_range: tuple[float, float] = (0.3, 0.8)
    seed: int = 0


def scalar_field_frame(spec: ScalarFieldSpec, t: float) -> np.ndarray:
    rng = rng_for(spec.seed, "scalar-field")
    h, w = spec.grid
    yy = np.arange(h)[:, None] + 0.5
    xx = np.arange(w)[None, :] + 0.5
    frame = np.zeros((h, w))
    for _ in range(spec.n_blobs):
        sigma = rng.uniform(*spec.sigma_range)
        p0 = (rng.uniform(sigma, h - sigma), rng.uniform(sigma, w - sigma))
        speed = rng.uniform(*spec.speed_range)
        angle = rng.uniform(0, 2 * math.pi)
        omega = rng.uniform(0.05, 0.2)
        phase = rng.uniform(0, 2 * math.pi)
        cy = float(_fold(p0[0] + speed * math.sin(angle) * t, sigma, h - sigma))
        cx = float(_fold(p0[1] + speed * math.cos(angle) * t, sigma, w - sigma))
        amp = 0.55 + 0.35 * math.sin(omega * t + phase)
        frame += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma * sigma))
    return np.clip(frame, 0.0, 1.0)[None]


def generate_scalar_field(spec: ScalarFieldSpec, total_frames: int, dt: float = 1.0) -> VideoClip:
    if total_frames < 1:
        raise ValueError("total_frames must be >= 1")
    frames = np.stack([scalar_field_frame(spec, i * dt) for i in range(total_frames)], axis=1)
    return VideoClip(frames=frames, dt=dt, origin_time=0.0)


# ---------------------------------------------------------------------------
# Transforms and io
# ---------------------------------------------------------------------------


def subsample(clip: VideoClip, rate: int) -> VideoClip:
    """Keep frames 0, rate, 2*rate, ...; scales ``dt`` accordingly."""
    if rate < 1 or int(rate) != rate:
        raise ValueError("rate must be a positive integer")
    if rate == 1:
        return VideoClip(frames=clip.frames.copy(), dt=clip.dt, origin_time=clip.origin_time)
    return VideoClip(frames=clip.frames[:, ::rate].copy(), dt=clip.dt * rate, origin_time=clip.origin_time)


CLIP_HEADER_PREFIX = "taylorcast-clip"


def save_clip(clip: VideoClip, path: str, seed: int | None = None) -> None:
    """Metadata line (dt, origin_time, generator seed) followed by the tensor blob."""
    header = f"{CLIP_HEADER_PREFIX} dt={clip.dt!r} origin={clip.origin_time!r} seed={seed if seed is not None else ''}\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8"))
        save_tensor(Tensor(clip.frames), fh)


def load_clip(path: str) -> tuple[VideoClip, int | None]:
    with open(path, "rb") as fh:
        header = fh.readline().decode("utf-8").strip()
        fields = header.split()
        if not fields or fields[0] != CLIP_HEADER_PREFIX:
            raise ValueError(f"not a clip file: header {header!r}")
        meta = dict(item.split("=", 1) for item in fields[1:])
        tensor = load_tensor(fh)
    seed = int(meta["seed"]) if meta.get("seed") else None
    clip = VideoClip(frames=tensor.data, dt=float(meta["dt"]), origin_time=float(meta["origin"]))
    return clip, seed


def split_window(clip: VideoClip, observe: int, horizon: int) -> tuple[np.ndarray, np.ndarray]:
    """First ``observe`` frames as the window, next ``horizon`` as targets.

    Returns (window [C, T, H, W], targets [K, C, H, W]).
    """
    if clip.length < observe + horizon:
        raise ValueError(f"clip of length {clip.length} cannot supply {observe}+{horizon} frames")
    window = clip.frames[:, :observe]
    future = clip.frames[:, observe : observe + horizon]
    targets = np.moveaxis(future, 1, 0)
    return window, targets


def make_training_set(
    spec: ShapeSceneSpec | ScalarFieldSpec,
    n_clips: int,
    observe: int,
    horizon: int,
    rate: int = 1,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Batch of (windows [N,C,T,H,W], targets [N,K,C,H,W]) from fresh seeded scenes.

    ``rate`` sub-samples each generated clip before splitting, so windows and
    targets are spaced ``rate`` base frames apart.
    """
    windows, targets = [], []
    for i in range(n_clips):
        clip_seed = rng_for(seed, f"clip-{i}").integers(2**63)
        scene = replace(spec, seed=int(clip_seed))
        total = (observe + horizon) * rate
        if isinstance(spec, ShapeSceneSpec):
            clip = generate_moving_shapes(scene, total)
        else:
            clip = generate_scalar_field(scene, total)
        clip = subsample(clip, rate)
        x, y = split_window(clip, observe, horizon)
        windows.append(x)
        targets.append(y)
    return np.stack(windows), np.stack(targets)
