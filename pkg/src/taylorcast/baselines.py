"""Comparators: forward-Euler integration and the two point-estimate heads.

The point-estimate variants reuse the forecaster's encoder and decoder and
replace only the temporal model: the offset tau is embedded and consumed as a
network input, so every new tau needs a fresh pass through the head.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import nn
from .metrics import mean_ssim_over_clips
from .model import (
    ModelConfig,
    build_decoder_params,
    build_encoder_params,
    calibrate_output_bias,
    decoder_forward,
    encoder_forward,
    train_loop,
)
from .seeding import rng_for
from .tensor import Tape, Tensor, backward, broadcast_to, concat, tsum
from .validation import as_clip_batch, as_frame_batch, as_tau_list

VARIANTS = ("expand", "flatten")


# ---------------------------------------------------------------------------
# Forward Euler
# ---------------------------------------------------------------------------


def euler_step(h, dh, dt):
    """One forward-Euler step h + dt * dh (works on floats, arrays, tensors)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return h + dh * dt


def euler_rollout(h0, derivative_fn, dt, n_steps, t0=0.0):
    """Iterate euler_step; returns the trajectory [h0, h1, ..., h_{n_steps}].

    ``derivative_fn(t, h)`` supplies the derivative at the step's start time.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    values = [h0]
    for k in range(n_steps):
        t = t0 + k * dt
        values.append(euler_step(values[-1], derivative_fn(t, values[-1]), dt))
    return values


# ---------------------------------------------------------------------------
# Point-estimate architectures
# ---------------------------------------------------------------------------


def build_point_estimate_params(config: ModelConfig, variant: str) -> dict[str, Tensor]:
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    rng = rng_for(config.seed, f"point-{variant}-init")
    slope = config.activation_slope
    params: dict[str, Tensor] = {}

    def register(name, w, b):
        params[f"{name}.w"] = w
        params[f"{name}.b"] = b

    build_encoder_params(rng, config, register)
    build_decoder_params(rng, config, register)

    c = config.latent_channels
    w, b = nn.init_linear(rng, 1, c, slope)
    register("vtau", w, b)

    if variant == "expand":
        register("pe.squeeze", *nn.init_conv(rng, _squeeze_spec(config), slope))
        register("pe.conv", *nn.init_conv(rng, nn.ConvSpec((1, 3, 3), (1, 1, 1), (0, 1, 1), 2 * c, 2 * c), slope))
        register("pe.down", *nn.init_conv(rng, nn.ConvSpec((1, 1, 1), (1, 1, 1), (0, 0, 0), 2 * c, c), slope))
    else:
        register("pe.sq1", *nn.init_conv(rng, nn.ConvSpec((config.clip_length, 3, 3), (1, 2, 2), (0, 1, 1), c, c), slope))
        register("pe.sq2", *nn.init_conv(rng, nn.ConvSpec((1, 3, 3), (1, 2, 2), (0, 1, 1), c, c), slope))
        register("pe.sq3", *nn.init_conv(rng, nn.ConvSpec((1, 3, 3), (1, 2, 2), (0, 1, 1), c, c), slope))
        register("pe.up1", *nn.init_conv(rng, nn.ConvSpec((1, 4, 4), (1, 2, 2), (0, 1, 1), c, 2 * c), slope, transposed=True))
        register("pe.up2", *nn.init_conv(rng, nn.ConvSpec((1, 4, 4), (1, 2, 2), (0, 1, 1), c, c), slope, transposed=True))
        register("pe.up3", *nn.init_conv(rng, nn.ConvSpec((1, 4, 4), (1, 2, 2), (0, 1, 1), c, c), slope, transposed=True))

    if config.dtype == "float32":
        for p in params.values():
            p.data = p.data.astype(np.float32)
    return params


def _squeeze_spec(config: ModelConfig) -> nn.ConvSpec:
    c = config.latent_channels
    return nn.ConvSpec((config.clip_length, 1, 1), (1, 1, 1), (0, 0, 0), c, c)


class PointEstimateModel:
    """Single-offset latent regressor h_{t+tau} = g(window, tau)."""

    def __init__(self, config: ModelConfig, variant: str, params: dict[str, Tensor] | None = None):
        if variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        self.config = config
        self.variant = variant
        self.params = params if params is not None else build_point_estimate_params(config, variant)
        self.encoder_calls = 0
        self.head_calls = 0
        self.last_concat_channels: int | None = None
        self.last_bottleneck_extent: int | None = None

    def reset_counters(self) -> None:
        self.encoder_calls = 0
        self.head_calls = 0

    def encode(self, clips) -> Tensor:
        cfg = self.config
        x = clips if isinstance(clips, Tensor) else Tensor(np.asarray(clips, dtype=cfg.np_dtype))
        self.encoder_calls += 1
        return encoder_forward(self.params, cfg, x)

    def _tau_vector(self, tau: float, n: int, dtype) -> Tensor:
        column = Tensor(np.full((n, 1), float(tau), dtype=dtype))
        return nn.linear(column, self.params["vtau.w"], self.params["vtau.b"])

    def head(self, latent_window: Tensor, tau: float) -> Tensor:
        """Latent window [N, C', T, H', W'] + tau -> latent frame [N, C', H', W']."""
        cfg = self.config
        c = cfg.latent_channels
        slope = cfg.activation_slope
        self.head_calls += 1
        n = latent_window.shape[0]
        vt = self._tau_vector(tau, n, latent_window.dtype)  # [N, C']

        if self.variant == "expand":
            squeezed = nn.conv3d(
                latent_window, self.params["pe.squeeze.w"], self.params["pe.squeeze.b"], _squeeze_spec(cfg)
            )[:, :, 0]
            hp, wp = squeezed.shape[-2:]
            tiled = broadcast_to(vt.reshape((n, c, 1, 1)), (n, c, hp, wp))
            stacked = concat([squeezed, tiled], axis=1)  # 2C' channels
            self.last_concat_channels = stacked.shape[1]
            mixed = nn.leaky_relu(
                nn.conv2d(stacked, self.params["pe.conv.w"], self.params["pe.conv.b"],
                          nn.ConvSpec((1, 3, 3), (1, 1, 1), (0, 1, 1), 2 * c, 2 * c)),
                slope,
            )
            return nn.conv2d(mixed, self.params["pe.down.w"], self.params["pe.down.b"],
                             nn.ConvSpec((1, 1, 1), (1, 1, 1), (0, 0, 0), 2 * c, c))

        hp, wp = latent_window.shape[-2:]
        if hp % 8 or wp % 8:
            raise ValueError(f"flatten variant needs latent extents divisible by 8, got {(hp, wp)}")
        h = nn.leaky_relu(
            nn.conv3d(latent_window, self.params["pe.sq1.w"], self.params["pe.sq1.b"],
                      nn.ConvSpec((cfg.clip_length, 3, 3), (1, 2, 2), (0, 1, 1), c, c)),
            slope,
        )[:, :, 0]
        h = nn.leaky_relu(
            nn.conv2d(h, self.params["pe.sq2.w"], self.params["pe.sq2.b"],
                      nn.ConvSpec((1, 3, 3), (1, 2, 2), (0, 1, 1), c, c)),
            slope,
        )
        h = nn.leaky_relu(
            nn.conv2d(h, self.params["pe.sq3.w"], self.params["pe.sq3.b"],
                      nn.ConvSpec((1, 3, 3), (1, 2, 2), (0, 1, 1), c, c)),
            slope,
        )
        self.last_bottleneck_extent = h.shape[-1]
        flat = h.reshape((n, c * h.shape[-2] * h.shape[-1]))
        joined = concat([flat, vt], axis=1)
        bottleneck_hw = h.shape[-2:]
        grid = joined.reshape((n, joined.shape[1] // (bottleneck_hw[0] * bottleneck_hw[1]), *bottleneck_hw))
        up = nn.leaky_relu(
            nn.conv_transpose2d(grid, self.params["pe.up1.w"], self.params["pe.up1.b"],
                                nn.ConvSpec((1, 4, 4), (1, 2, 2), (0, 1, 1), c, 2 * c)),
            slope,
        )
        up = nn.leaky_relu(
            nn.conv_transpose2d(up, self.params["pe.up2.w"], self.params["pe.up2.b"],
                                nn.ConvSpec((1, 4, 4), (1, 2, 2), (0, 1, 1), c, c)),
            slope,
        )
        return nn.conv_transpose2d(up, self.params["pe.up3.w"], self.params["pe.up3.b"],
                                   nn.ConvSpec((1, 4, 4), (1, 2, 2), (0, 1, 1), c, c))

    def decode(self, h: Tensor) -> Tensor:
        return decoder_forward(self.params, self.config, h)

    def forward(self, clips, taus) -> list[Tensor]:
        taus = as_tau_list(taus)
        latent = self.encode(clips)
        return [self.decode(self.head(latent, tau)) for tau in taus]

    def predict(self, clips, taus) -> np.ndarray:
        frames = self.forward(clips, taus)
        return np.stack([f.data for f in frames], axis=1)

    def train_step(self, windows, targets, taus, opt_state: nn.AdamState) -> float:
        taus = as_tau_list(taus)
        x = np.asarray(windows, dtype=self.config.np_dtype)
        y = np.asarray(targets, dtype=self.config.np_dtype)
        with Tape() as tape:
            latent = self.encode(x)
            total = None
            for k, tau in enumerate(taus):
                pred = self.decode(self.head(latent, tau))
                diff = pred - Tensor(y[:, k])
                term = tsum(diff * diff)
                total = term if total is None else total + term
            loss = total * (1.0 / y.size)
        if not math.isfinite(loss.item()):
            raise FloatingPointError("training loss is non-finite")
        grad_map = backward(tape, Tensor(np.asarray(1.0, dtype=loss.dtype)))
        grads = {
            name: grad_map[p.uid].data if p.uid in grad_map else np.zeros_like(p.data)
            for name, p in self.params.items()
        }
        nn.adam_step(self.params, grads, opt_state)
        return loss.item()


class PointEstimateForecaster(BaseEstimator):
    """fit/predict facade over the Expand or Flatten point-estimate model."""

    def __init__(
        self,
        variant: str = "expand",
        latent_channels: int = 32,
        clip_length: int = 10,
        horizon: int = 10,
        in_channels: int = 1,
        spatial_down: int = 4,
        encoder_depth: int = 2,
        decoder_channels: tuple[int, ...] = (32, 16, 8),
        activation_slope: float = 0.2,
        lr: float = 1e-4,
        epochs: int = 50,
        batch_size: int = 4,
        seed: int = 0,
        dtype: str = "float64",
        scheduler_factor: float = 0.5,
        scheduler_patience: int = 20,
        verbose: int = 0,
    ):
        self.variant = variant
        self.latent_channels = latent_channels
        self.clip_length = clip_length
        self.horizon = horizon
        self.in_channels = in_channels
        self.spatial_down = spatial_down
        self.encoder_depth = encoder_depth
        self.decoder_channels = decoder_channels
        self.activation_slope = activation_slope
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.dtype = dtype
        self.scheduler_factor = scheduler_factor
        self.scheduler_patience = scheduler_patience
        self.verbose = verbose

    def fit(self, X, y, taus=None):
        X = as_clip_batch(X, self.in_channels, self.clip_length)
        y = as_frame_batch(y, n_clips=X.shape[0])
        taus = as_tau_list(taus if taus is not None else range(1, y.shape[1] + 1))
        config = ModelConfig(
            gamma=1,  # unused by the point heads; keep the shared config valid
            in_channels=self.in_channels,
            latent_channels=self.latent_channels,
            clip_length=self.clip_length,
            spatial_down=self.spatial_down,
            encoder_depth=self.encoder_depth,
            horizon=self.horizon,
            lr=self.lr,
            epochs=self.epochs,
            batch=self.batch_size,
            seed=self.seed,
            dtype=self.dtype,
            activation_slope=self.activation_slope,
            decoder_channels=tuple(self.decoder_channels),
            scheduler_factor=self.scheduler_factor,
            scheduler_patience=self.scheduler_patience,
        )
        self.config_ = config
        self.model_ = PointEstimateModel(config, self.variant)
        calibrate_output_bias(self.model_.params, y)
        opt = nn.adam_init(self.model_.params, lr=config.lr)
        self.history_ = train_loop(
            self.model_,
            opt,
            X,
            y,
            taus,
            epochs=config.epochs,
            batch_size=config.batch,
            seed=config.seed,
            scheduler=nn.PlateauScheduler(config.scheduler_factor, config.scheduler_patience, "max"),
            verbose=self.verbose,
        )
        self.opt_state_ = opt
        return self

    def predict(self, X, taus=None) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = as_clip_batch(X, self.in_channels, self.clip_length)
        taus = as_tau_list(taus if taus is not None else range(1, self.horizon + 1))
        return self.model_.predict(X, taus)

    def score(self, X, y, taus=None) -> float:
        y = as_frame_batch(y)
        taus = as_tau_list(taus if taus is not None else range(1, y.shape[1] + 1))
        return mean_ssim_over_clips(self.predict(X, taus), y)
