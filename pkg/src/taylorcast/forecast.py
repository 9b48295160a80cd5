"""Inference-time strategies: continuous tau grids and segmented long-horizon rollout."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import TaylorModel
from .validation import as_clip_batch


@dataclass(frozen=True)
class RolloutPlan:
    """Predict ``horizon`` frames, re-encoding after every ``step`` of them.

    ``ceil(horizon / step)`` encoder passes in total.  ``tau_grid`` optionally
    adds fractional offsets (in (0, step]) evaluated within each segment,
    without changing the re-encoding cadence.
    """

    horizon: int
    step: int
    tau_grid: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be positive")
        if not 1 <= self.step <= self.horizon:
            raise ValueError("step must lie in [1, horizon]")
        if self.tau_grid is not None:
            if any(not 0.0 < t <= self.step for t in self.tau_grid):
                raise ValueError("tau_grid offsets must lie in (0, step]")

    @property
    def n_segments(self) -> int:
        return math.ceil(self.horizon / self.step)


def predict_continuous(
    model: TaylorModel, clip, tau_start: float, tau_step: float, count: int
) -> tuple[np.ndarray, np.ndarray]:
    """Frames at ``tau_start + i * tau_step`` for i in [0, count), one encoder pass.

    Returns (taus [count], frames [N, count, C, H, W]).
    """
    if tau_step <= 0:
        raise ValueError("tau_step must be positive")
    if count < 1:
        raise ValueError("count must be >= 1")
    window = as_clip_batch(clip)
    taus = np.array([tau_start + i * tau_step for i in range(count)])
    return taus, model.predict(window, list(taus))


def rollout(model: TaylorModel, clip, plan: RolloutPlan) -> np.ndarray:
    """Partial-autoregressive prediction: frames [N, horizon, C, H, W].

    Each segment predicts ``plan.step`` integer-offset frames in one pass,
    appends them to the observation window (dropping the oldest frames), and
    re-encodes.  With ``step == horizon`` this is exactly one direct forward
    pass; with ``step == 1`` it is the standard auto-regressive setting.
    """
    window = as_clip_batch(clip)
    t_obs = window.shape[2]
    if plan.step > t_obs:
        raise ValueError(f"step {plan.step} exceeds the {t_obs}-frame observation window")

    outputs: list[np.ndarray] = []
    fractional: list[tuple[float, np.ndarray]] = []
    remaining = plan.horizon
    produced = 0
    while remaining > 0:
        k = min(plan.step, remaining)
        taus = [float(i) for i in range(1, k + 1)]
        frames = model.predict(window, taus)  # [N, k, C, H, W]
        outputs.append(frames)
        if plan.tau_grid is not None:
            for tau in plan.tau_grid:
                if tau <= k:
                    offset = produced + tau
                    fractional.append((offset, model.predict(window, [tau])[:, 0]))
        remaining -= k
        produced += k
        if remaining > 0:
            sequence = np.concatenate([window, np.moveaxis(frames, 1, 2)], axis=2)
            window = sequence[:, :, -t_obs:]
    result = np.concatenate(outputs, axis=1)
    if plan.tau_grid is not None:
        return result, fractional
    return result


def rollout_ssim_curve(model: TaylorModel, clip, targets, plan: RolloutPlan, data_range: float = 1.0):
    """Per-frame SSIM of a rollout against ground-truth frames [N, horizon, C, H, W]."""
    from .metrics import fitting_window, ssim

    targets = np.asarray(targets, dtype=np.float64)
    frames = rollout(model, clip, plan)
    if isinstance(frames, tuple):
        frames = frames[0]
    if frames.shape != targets.shape:
        raise ValueError(f"rollout produced {frames.shape}, targets are {targets.shape}")
    window = fitting_window(frames.shape[-2], frames.shape[-1])
    curve = []
    for k in range(frames.shape[1]):
        values = [
            ssim(frames[n, k], targets[n, k], data_range=data_range, window_size=window)
            for n in range(frames.shape[0])
        ]
        curve.append(float(np.mean(values)))
    return curve
