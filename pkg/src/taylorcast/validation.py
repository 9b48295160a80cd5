"""Input validation helpers shared by the estimators and the CLI."""

from __future__ import annotations

import numpy as np


def as_clip_batch(X, in_channels: int | None = None, clip_length: int | None = None) -> np.ndarray:
    """Coerce to a float array of observation windows [N, C, T, H, W].

    Accepts a VideoClip, a single window [C, T, H, W], or a batch; validates
    channel count and temporal extent when given.
    """
    if hasattr(X, "frames"):
        X = X.frames
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 4:
        arr = arr[None]
    if arr.ndim != 5:
        raise ValueError(f"expected clips of shape [N, C, T, H, W] or [C, T, H, W], got {arr.shape}")
    if in_channels is not None and arr.shape[1] != in_channels:
        raise ValueError(f"expected {in_channels} channels, got {arr.shape[1]}")
    if clip_length is not None and arr.shape[2] != clip_length:
        raise ValueError(f"expected clip length {clip_length}, got {arr.shape[2]}")
    return arr


def as_frame_batch(y, n_clips: int | None = None) -> np.ndarray:
    """Coerce to target frames [N, K, C, H, W] (K frames per clip)."""
    arr = np.asarray(y, dtype=np.float64)
    if arr.ndim == 4:
        arr = arr[None]
    if arr.ndim != 5:
        raise ValueError(f"expected targets of shape [N, K, C, H, W], got {arr.shape}")
    if n_clips is not None and arr.shape[0] != n_clips:
        raise ValueError(f"targets cover {arr.shape[0]} clips but {n_clips} windows were given")
    return arr


def as_tau_list(taus) -> list[float]:
    if np.isscalar(taus):
        taus = [taus]
    out = [float(t) for t in taus]
    if not out:
        raise ValueError("tau list must be non-empty")
    if any(not np.isfinite(t) for t in out):
        raise ValueError("tau values must be finite")
    return out


def check_pixel_range(frames: np.ndarray, what: str = "frames") -> None:
    lo, hi = float(frames.min()), float(frames.max())
    if lo < -1e-9 or hi > 1.0 + 1e-9:
        raise ValueError(f"{what} must lie in [0, 1], found range [{lo:g}, {hi:g}]")
