"""The continuous-time forecaster.

A 3-D conv encoder maps an observation window to a latent window; a chain of
delta conv blocks infers the latent time-derivatives at the last observation;
evaluating the resulting truncated Taylor polynomial at any real offset tau
and decoding gives the predicted frame.  Inference therefore runs the encoder
and the derivative chain once per window no matter how many offsets are
requested.
"""

from __future__ import annotations

import dataclasses
import math
import struct
import warnings
from dataclasses import dataclass
from typing import BinaryIO

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import nn
from .metrics import mean_ssim_over_clips
from .seeding import rng_for
from .tensor import Tape, Tensor, backward, concat, load_tensor, save_tensor, tsum
from .validation import as_clip_batch, as_frame_batch, as_tau_list

CHECKPOINT_MAGIC = b"TSN1"


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and training hyperparameters.

    tau is measured in observed-frame intervals (tau=1 is one inter-frame gap
    of the input window); ``tau_unit`` records how much physical time one such
    interval covered in the training data, e.g. 2.0 when training on
    every-second-frame clips.
    """

    gamma: int = 4
    in_channels: int = 1
    latent_channels: int = 32
    clip_length: int = 10
    spatial_down: int = 4
    encoder_depth: int = 2
    horizon: int = 10
    tau_unit: float = 1.0
    # heads emit delta_n through a fixed n!/tau_scale^n gain so every order
    # contributes O(1) at tau=tau_scale; without it Adam's normalized steps
    # blow up the high-order terms (tau^n/n! reaches 417 at tau=10, gamma=4)
    tau_scale: float = 0.0  # 0 means "use the horizon"
    lr: float = 1e-4
    epochs: int = 50
    batch: int = 4
    seed: int = 0
    dtype: str = "float64"
    activation_slope: float = 0.2
    decoder_channels: tuple[int, ...] = (32, 16, 8)
    decoder_upsample: str = "transposed"  # recorded: paper leaves this open
    output_activation: str = "sigmoid"
    scheduler_factor: float = 0.5
    scheduler_patience: int = 20

    def __post_init__(self):
        if self.gamma < 1:
            raise ValueError("gamma must be >= 1")
        if self.spatial_down < 1 or self.spatial_down & (self.spatial_down - 1):
            raise ValueError("spatial_down must be a power of two")
        if self.clip_length < 1 or self.horizon < 1:
            raise ValueError("clip_length and horizon must be positive")
        n_up = self.n_downsamples
        if len(self.decoder_channels) < n_up + 1:
            raise ValueError(f"decoder_channels needs at least {n_up + 1} entries")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be 'float32' or 'float64'")

    @property
    def n_downsamples(self) -> int:
        return int(round(math.log2(self.spatial_down)))

    @property
    def effective_tau_scale(self) -> float:
        return float(self.horizon) if self.tau_scale == 0.0 else float(self.tau_scale)

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def latent_extents(self, height: int, width: int) -> tuple[int, int]:
        if height % self.spatial_down or width % self.spatial_down:
            raise ValueError(f"spatial extents {(height, width)} not divisible by {self.spatial_down}")
        return height // self.spatial_down, width // self.spatial_down


@dataclass
class LatentWindow:
    """Encoder output [N, C', T, H', W']; ``last`` is its final temporal slice."""

    window: Tensor

    @property
    def last(self) -> Tensor:
        return self.window[:, :, self.window.shape[2] - 1]


@dataclass
class TaylorCoefficients:
    """Inferred latent derivatives delta_0..delta_gamma, each [N, C', H', W']."""

    delta: list[Tensor]

    def __post_init__(self):
        if not self.delta:
            raise ValueError("need at least the zeroth coefficient")
        shape = self.delta[0].shape
        for i, d in enumerate(self.delta):
            if d.shape != shape:
                raise ValueError(f"coefficient {i} has shape {d.shape}, expected {shape}")

    @property
    def order(self) -> int:
        return len(self.delta) - 1


def taylor_evaluate(coeffs: TaylorCoefficients | list[Tensor], tau: float) -> Tensor:
    """Evaluate sum_n delta_n * tau^n / n! — plain polynomial arithmetic.

    tau=0 returns delta_0 itself (bitwise).  Negative tau extrapolates into
    the past and is flagged with a warning.
    """
    tau = float(tau)
    if not math.isfinite(tau):
        raise ValueError(f"tau must be finite, got {tau}")
    if tau < 0:
        warnings.warn("negative tau extrapolates into the past", stacklevel=2)
    delta = coeffs.delta if isinstance(coeffs, TaylorCoefficients) else list(coeffs)
    if tau == 0.0:
        return delta[0]
    out = delta[0]
    for n in range(1, len(delta)):
        out = out + delta[n] * (tau**n / math.factorial(n))
    return out


# ---------------------------------------------------------------------------
# Parameter construction
# ---------------------------------------------------------------------------


def _encoder_channel_ramp(config: ModelConfig) -> list[int]:
    n_down = config.n_downsamples
    if n_down <= 1:
        return [config.latent_channels]
    ramp = [max(config.latent_channels // 2 ** (n_down - 1 - i), 4) for i in range(n_down - 1)]
    return ramp + [config.latent_channels]


def _decoder_plan(config: ModelConfig) -> list[tuple[str, int, int]]:
    """Six conv layers, ``n_downsamples`` of them stride-2 transposed."""
    n_up = config.n_downsamples
    ch = list(config.decoder_channels)
    plan: list[tuple[str, int, int]] = [("conv", config.latent_channels, ch[0])]
    for u in range(n_up):
        plan.append(("convT", ch[u], ch[u + 1]))
        plan.append(("conv", ch[u + 1], ch[u + 1]))
    while len(plan) < 5:
        plan.append(("conv", ch[n_up], ch[n_up]))
    plan.append(("conv", ch[n_up], config.in_channels))
    if len(plan) != 6:
        raise ValueError(f"decoder plan has {len(plan)} layers for spatial_down={config.spatial_down}")
    return plan


def build_encoder_params(rng, config: ModelConfig, register) -> None:
    slope = config.activation_slope
    ramp = _encoder_channel_ramp(config)
    cin = config.in_channels
    if config.n_downsamples == 0:
        spec = nn.ConvSpec((3, 3, 3), (1, 1, 1), (1, 1, 1), cin, config.latent_channels)
        register("enc.stem", *nn.init_conv(rng, spec, slope))
    else:
        for i, cout in enumerate(ramp):
            spec = nn.ConvSpec((3, 3, 3), (1, 2, 2), (1, 1, 1), cin, cout)
            register("enc.stem" if i == 0 else f"enc.down{i}", *nn.init_conv(rng, spec, slope))
            cin = cout
    for r in range(config.encoder_depth):
        c = config.latent_channels
        spec = nn.ConvSpec((3, 3, 3), (1, 1, 1), (1, 1, 1), c, c)
        register(f"enc.res{r}.c1", *nn.init_conv(rng, spec, slope))
        # damp the residual branch so stacked blocks keep unit-scale latents
        w2, b2 = nn.init_conv(rng, spec, slope)
        w2.data *= 0.1
        register(f"enc.res{r}.c2", w2, b2)


def build_decoder_params(rng, config: ModelConfig, register) -> None:
    slope = config.activation_slope
    for j, (kind, lin, lout) in enumerate(_decoder_plan(config), start=1):
        if kind == "convT":
            spec = nn.ConvSpec((1, 4, 4), (1, 2, 2), (0, 1, 1), lout, lin)
            register(f"dec.l{j}", *nn.init_conv(rng, spec, slope, transposed=True))
        else:
            spec = nn.ConvSpec((1, 3, 3), (1, 1, 1), (0, 1, 1), lin, lout)
            register(f"dec.l{j}", *nn.init_conv(rng, spec, slope))


def build_parameters(config: ModelConfig) -> dict[str, Tensor]:
    rng = rng_for(config.seed, "model-init")
    slope = config.activation_slope
    params: dict[str, Tensor] = {}

    def register(name: str, w: Tensor, b: Tensor) -> None:
        params[f"{name}.w"] = w
        params[f"{name}.b"] = b

    build_encoder_params(rng, config, register)

    # derivative-estimator chain: per order one block of two convs plus a head.
    # Heads start at zero so a fresh model predicts decode(h_t) at every tau;
    # the tau^n/n! factors would otherwise blow up the early loss surface.
    c = config.latent_channels
    block_spec = nn.ConvSpec((3, 3, 3), (1, 1, 1), (1, 1, 1), c, c)
    head_spec = nn.ConvSpec((config.clip_length, 3, 3), (1, 1, 1), (0, 1, 1), c, c)
    for n in range(1, config.gamma + 1):
        register(f"dcb{n}.c1", *nn.init_conv(rng, block_spec, slope))
        register(f"dcb{n}.c2", *nn.init_conv(rng, block_spec, slope))
        hw, hb = nn.init_conv(rng, head_spec, slope)
        hw.data[:] = 0.0
        register(f"head{n}", hw, hb)

    build_decoder_params(rng, config, register)

    if config.dtype == "float32":
        for p in params.values():
            p.data = p.data.astype(np.float32)
    return params


def encoder_forward(params: dict[str, Tensor], config: ModelConfig, x: Tensor) -> Tensor:
    slope = config.activation_slope
    ramp = _encoder_channel_ramp(config)
    cin = config.in_channels
    h = x
    if config.n_downsamples == 0:
        spec = nn.ConvSpec((3, 3, 3), (1, 1, 1), (1, 1, 1), cin, config.latent_channels)
        h = nn.leaky_relu(nn.conv3d(h, params["enc.stem.w"], params["enc.stem.b"], spec), slope)
    else:
        for i, cout in enumerate(ramp):
            name = "enc.stem" if i == 0 else f"enc.down{i}"
            spec = nn.ConvSpec((3, 3, 3), (1, 2, 2), (1, 1, 1), cin, cout)
            h = nn.leaky_relu(nn.conv3d(h, params[f"{name}.w"], params[f"{name}.b"], spec), slope)
            cin = cout
    c = config.latent_channels
    res_spec = nn.ConvSpec((3, 3, 3), (1, 1, 1), (1, 1, 1), c, c)
    for r in range(config.encoder_depth):
        inner = nn.leaky_relu(nn.conv3d(h, params[f"enc.res{r}.c1.w"], params[f"enc.res{r}.c1.b"], res_spec), slope)
        inner = nn.conv3d(inner, params[f"enc.res{r}.c2.w"], params[f"enc.res{r}.c2.b"], res_spec)
        h = nn.leaky_relu(h + inner, slope)
    return h


def decoder_forward(params: dict[str, Tensor], config: ModelConfig, h: Tensor) -> Tensor:
    slope = config.activation_slope
    out = h
    for j, (kind, lin, lout) in enumerate(_decoder_plan(config), start=1):
        w = params[f"dec.l{j}.w"]
        b = params[f"dec.l{j}.b"]
        if kind == "convT":
            spec = nn.ConvSpec((1, 4, 4), (1, 2, 2), (0, 1, 1), lout, lin)
            out = nn.conv_transpose2d(out, w, b, spec)
        else:
            spec = nn.ConvSpec((1, 3, 3), (1, 1, 1), (0, 1, 1), lin, lout)
            out = nn.conv2d(out, w, b, spec)
        out = nn.sigmoid(out) if j == 6 else nn.leaky_relu(out, slope)
    return out


def calibrate_output_bias(params: dict[str, Tensor], targets: np.ndarray, layer: str = "dec.l6.b") -> None:
    """Start the decoder at the best constant predictor, logit(mean pixel).

    Without this, sparse targets make "predict all zeros" the steepest initial
    descent direction and the output sigmoid saturates beyond recovery.
    """
    mean = float(np.clip(np.mean(targets), 1e-3, 1.0 - 1e-3))
    params[layer].data[:] = math.log(mean / (1.0 - mean))


class TaylorModel:
    """Parameter container plus the forward pipeline, with call instrumentation."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor] | None = None):
        self.config = config
        self.params = params if params is not None else build_parameters(config)
        self.decoder_plan = _decoder_plan(config)
        self.encoder_calls = 0
        self.dcb_chain_calls = 0

    def reset_counters(self) -> None:
        self.encoder_calls = 0
        self.dcb_chain_calls = 0

    # -- building blocks ----------------------------------------------------

    def _conv(self, x: Tensor, name: str, spec: nn.ConvSpec) -> Tensor:
        return nn.conv3d(x, self.params[f"{name}.w"], self.params[f"{name}.b"], spec)

    def encode(self, clips) -> LatentWindow:
        """[N, C, T, H, W] pixel window -> latent window [N, C', T, H', W']."""
        cfg = self.config
        x = clips if isinstance(clips, Tensor) else Tensor(np.asarray(clips, dtype=cfg.np_dtype))
        if x.ndim != 5:
            raise ValueError(f"encode expects [N, C, T, H, W], got {x.shape}")
        if x.shape[1] != cfg.in_channels or x.shape[2] != cfg.clip_length:
            raise ValueError(
                f"window {x.shape} does not match config (C={cfg.in_channels}, T={cfg.clip_length})"
            )
        cfg.latent_extents(x.shape[3], x.shape[4])
        self.encoder_calls += 1
        return LatentWindow(encoder_forward(self.params, cfg, x))

    def estimate_derivatives(self, latent: LatentWindow) -> TaylorCoefficients:
        """Chain the delta blocks; delta_0 is the raw last latent slice."""
        cfg = self.config
        self.dcb_chain_calls += 1
        slope = cfg.activation_slope
        c = cfg.latent_channels
        block_spec = nn.ConvSpec((3, 3, 3), (1, 1, 1), (1, 1, 1), c, c)
        head_spec = nn.ConvSpec((cfg.clip_length, 3, 3), (1, 1, 1), (0, 1, 1), c, c)

        delta = [latent.last]
        h = latent.window
        scale_base = cfg.effective_tau_scale
        for n in range(1, cfg.gamma + 1):
            h = nn.leaky_relu(self._conv(h, f"dcb{n}.c1", block_spec), slope)
            h = nn.leaky_relu(self._conv(h, f"dcb{n}.c2", block_spec), slope)
            head = self._conv(h, f"head{n}", head_spec)
            gain = math.factorial(n) / scale_base**n
            delta.append(head[:, :, 0] * gain)
        return TaylorCoefficients(delta)

    def decode(self, h: Tensor) -> Tensor:
        """Latent [N, C', H', W'] -> frame [N, C, H, W] in [0, 1]."""
        cfg = self.config
        if h.ndim != 4 or h.shape[1] != cfg.latent_channels:
            raise ValueError(f"decode expects [N, {cfg.latent_channels}, H', W'], got {h.shape}")
        return decoder_forward(self.params, cfg, h)

    def infer_coefficients(self, clips) -> TaylorCoefficients:
        return self.estimate_derivatives(self.encode(clips))

    def forward(self, clips, taus) -> list[Tensor]:
        """One encoder + one derivative-chain pass, then per-tau evaluation."""
        taus = as_tau_list(taus)
        coeffs = self.infer_coefficients(clips)
        return [self.decode(taylor_evaluate(coeffs, tau)) for tau in taus]

    def predict(self, clips, taus) -> np.ndarray:
        """Forward pass returning frames [N, K, C, H, W] as a plain array."""
        frames = self.forward(clips, taus)
        return np.stack([f.data for f in frames], axis=1)

    def train_step(self, windows, targets, taus, opt_state: nn.AdamState) -> float:
        """MSE over all target frames, one Adam update.  Returns the loss.

        Decoding stays per-tau (the same path predict takes), so training a
        model against its own outputs really does measure a zero loss.
        """
        taus = as_tau_list(taus)
        x = np.asarray(windows, dtype=self.config.np_dtype)
        y = np.asarray(targets, dtype=self.config.np_dtype)
        if y.shape[1] != len(taus):
            raise ValueError(f"{y.shape[1]} target frames but {len(taus)} tau values")
        with Tape() as tape:
            coeffs = self.infer_coefficients(x)
            total = None
            for k, tau in enumerate(taus):
                pred = self.decode(taylor_evaluate(coeffs, tau))
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


# ---------------------------------------------------------------------------
# Checkpoints: magic "TSN1", config text block, named parameter manifest with
# tensors in the tensor-core binary format, optional training-state section.
# ---------------------------------------------------------------------------


def _config_to_text(config: ModelConfig) -> str:
    lines = []
    for f in sorted(dataclasses.fields(ModelConfig), key=lambda f: f.name):
        value = getattr(config, f.name)
        if isinstance(value, tuple):
            encoded = ",".join(repr(v) for v in value)
        else:
            encoded = repr(value)
        lines.append(f"{f.name}={encoded}")
    return "\n".join(lines) + "\n"


def _config_from_text(text: str) -> ModelConfig:
    fields = {f.name: f for f in dataclasses.fields(ModelConfig)}
    values = {}
    for line in text.strip().splitlines():
        key, raw = line.split("=", 1)
        f = fields[key]
        if f.type.startswith("tuple"):
            values[key] = tuple(int(v) if v.lstrip("-").isdigit() else float(v) for v in raw.split(","))
        elif f.type == "int":
            values[key] = int(raw)
        elif f.type == "float":
            values[key] = float(raw)
        else:
            values[key] = raw.strip("'\"")
    return ModelConfig(**values)


def _write_block(fh: BinaryIO, text: str) -> None:
    payload = text.encode("utf-8")
    fh.write(struct.pack("<I", len(payload)))
    fh.write(payload)


def _read_block(fh: BinaryIO) -> str:
    (length,) = struct.unpack("<I", fh.read(4))
    return fh.read(length).decode("utf-8")


def _write_named_tensors(fh: BinaryIO, tensors: dict[str, np.ndarray]) -> None:
    fh.write(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        encoded = name.encode("utf-8")
        fh.write(struct.pack("<H", len(encoded)))
        fh.write(encoded)
        save_tensor(Tensor(tensors[name]), fh)


def _read_named_tensors(fh: BinaryIO) -> dict[str, np.ndarray]:
    (count,) = struct.unpack("<I", fh.read(4))
    out = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", fh.read(2))
        name = fh.read(name_len).decode("utf-8")
        out[name] = load_tensor(fh).data
    return out


def save_checkpoint(
    path: str,
    model: TaylorModel,
    opt_state: nn.AdamState | None = None,
    extra: dict[str, float] | None = None,
) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        _write_block(fh, _config_to_text(model.config))
        _write_named_tensors(fh, {name: p.data for name, p in model.params.items()})
        state_fields: dict[str, float] = dict(extra or {})
        state_tensors: dict[str, np.ndarray] = {}
        if opt_state is not None:
            state_fields.update(
                adam_t=opt_state.t,
                adam_lr=opt_state.lr,
                adam_beta1=opt_state.beta1,
                adam_beta2=opt_state.beta2,
                adam_eps=opt_state.eps,
            )
            for name, m in opt_state.m.items():
                state_tensors[f"m.{name}"] = m
            for name, v in opt_state.v.items():
                state_tensors[f"v.{name}"] = v
        _write_block(fh, "".join(f"{k}={v!r}\n" for k, v in sorted(state_fields.items())))
        _write_named_tensors(fh, state_tensors)


def load_checkpoint(path: str) -> tuple[TaylorModel, nn.AdamState | None, dict[str, float]]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"bad checkpoint magic: {magic!r}")
        config = _config_from_text(_read_block(fh))
        arrays = _read_named_tensors(fh)
        params = {name: Tensor(arr, requires_grad=True) for name, arr in arrays.items()}
        model = TaylorModel(config, params)
        state_text = _read_block(fh)
        state_tensors = _read_named_tensors(fh)
    fields = {}
    for line in state_text.strip().splitlines():
        if not line:
            continue
        key, raw = line.split("=", 1)
        fields[key] = float(raw)
    opt_state = None
    if "adam_t" in fields:
        opt_state = nn.AdamState(
            lr=fields.pop("adam_lr"),
            beta1=fields.pop("adam_beta1"),
            beta2=fields.pop("adam_beta2"),
            eps=fields.pop("adam_eps"),
            t=int(fields.pop("adam_t")),
            m={k[2:]: v for k, v in state_tensors.items() if k.startswith("m.")},
            v={k[2:]: v for k, v in state_tensors.items() if k.startswith("v.")},
        )
    return model, opt_state, fields


# ---------------------------------------------------------------------------
# Estimator facade
# ---------------------------------------------------------------------------


class TaylorForecaster(BaseEstimator):
    """Continuous-time frame forecaster with a fit/predict interface.

    ``fit(X, y)`` trains on observation windows X [N, C, T, H, W] against
    future frames y [N, K, C, H, W] (frame k of y sits tau=k+1 observed-frame
    intervals past the window by default).  ``predict(X, taus)`` then returns
    frames for any real tau offsets in one encoder pass per window.
    """

    def __init__(
        self,
        gamma: int = 4,
        latent_channels: int = 32,
        clip_length: int = 10,
        horizon: int = 10,
        in_channels: int = 1,
        spatial_down: int = 4,
        encoder_depth: int = 2,
        decoder_channels: tuple[int, ...] = (32, 16, 8),
        activation_slope: float = 0.2,
        tau_unit: float = 1.0,
        lr: float = 1e-4,
        epochs: int = 50,
        batch_size: int = 4,
        seed: int = 0,
        dtype: str = "float64",
        scheduler_factor: float = 0.5,
        scheduler_patience: int = 20,
        verbose: int = 0,
    ):
        self.gamma = gamma
        self.latent_channels = latent_channels
        self.clip_length = clip_length
        self.horizon = horizon
        self.in_channels = in_channels
        self.spatial_down = spatial_down
        self.encoder_depth = encoder_depth
        self.decoder_channels = decoder_channels
        self.activation_slope = activation_slope
        self.tau_unit = tau_unit
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.dtype = dtype
        self.scheduler_factor = scheduler_factor
        self.scheduler_patience = scheduler_patience
        self.verbose = verbose

    def _config(self) -> ModelConfig:
        return ModelConfig(
            gamma=self.gamma,
            in_channels=self.in_channels,
            latent_channels=self.latent_channels,
            clip_length=self.clip_length,
            spatial_down=self.spatial_down,
            encoder_depth=self.encoder_depth,
            horizon=self.horizon,
            tau_unit=self.tau_unit,
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

    def fit(self, X, y, taus=None):
        X = as_clip_batch(X, self.in_channels, self.clip_length)
        y = as_frame_batch(y, n_clips=X.shape[0])
        taus = as_tau_list(taus if taus is not None else range(1, y.shape[1] + 1))
        if len(taus) != y.shape[1]:
            raise ValueError(f"{y.shape[1]} target frames but {len(taus)} tau values")

        config = self._config()
        self.config_ = config
        self.model_ = TaylorModel(config)
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
        self.loss_curve_ = [row["loss"] for row in self.history_]
        return self

    def predict(self, X, taus=None) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = as_clip_batch(X, self.in_channels, self.clip_length)
        taus = as_tau_list(taus if taus is not None else range(1, self.horizon + 1))
        return self.model_.predict(X, taus)

    def score(self, X, y, taus=None) -> float:
        """Mean SSIM of the predictions against target frames (higher is better)."""
        y = as_frame_batch(y)
        taus = as_tau_list(taus if taus is not None else range(1, y.shape[1] + 1))
        return mean_ssim_over_clips(self.predict(X, taus), y)

    def save(self, path: str) -> None:
        check_is_fitted(self, "model_")
        save_checkpoint(path, self.model_, self.opt_state_)

    @classmethod
    def load(cls, path: str) -> "TaylorForecaster":
        model, opt_state, _ = load_checkpoint(path)
        cfg = model.config
        est = cls(
            gamma=cfg.gamma,
            latent_channels=cfg.latent_channels,
            clip_length=cfg.clip_length,
            horizon=cfg.horizon,
            in_channels=cfg.in_channels,
            spatial_down=cfg.spatial_down,
            encoder_depth=cfg.encoder_depth,
            decoder_channels=cfg.decoder_channels,
            activation_slope=cfg.activation_slope,
            tau_unit=cfg.tau_unit,
            lr=cfg.lr,
            epochs=cfg.epochs,
            batch_size=cfg.batch,
            seed=cfg.seed,
            dtype=cfg.dtype,
            scheduler_factor=cfg.scheduler_factor,
            scheduler_patience=cfg.scheduler_patience,
        )
        est.config_ = cfg
        est.model_ = model
        est.opt_state_ = opt_state if opt_state is not None else nn.adam_init(model.params, lr=cfg.lr)
        est.history_ = []
        est.loss_curve_ = []
        return est


def train_loop(
    model: TaylorModel,
    opt: nn.AdamState,
    X: np.ndarray,
    y: np.ndarray,
    taus: list[float],
    epochs: int,
    batch_size: int,
    seed: int,
    scheduler: nn.PlateauScheduler | None = None,
    verbose: int = 0,
    start_epoch: int = 0,
    ssim_clips: int = 8,
) -> list[dict[str, float]]:
    """Minibatch epochs with a plateau schedule on training-set SSIM.

    Epoch shuffling derives from (seed, epoch index) so resuming from a
    checkpoint replays the identical stream.
    """
    n = X.shape[0]
    history = []
    for epoch in range(start_epoch, epochs):
        order = rng_for(seed, f"epoch-{epoch}").permutation(n)
        losses = []
        for lo in range(0, n, batch_size):
            idx = order[lo : lo + batch_size]
            losses.append(model.train_step(X[idx], y[idx], taus, opt))
        sample = slice(0, min(ssim_clips, n))
        train_ssim = mean_ssim_over_clips(model.predict(X[sample], taus), y[sample])
        if scheduler is not None:
            opt.lr = scheduler.step(train_ssim, opt.lr)
        row = {
            "epoch": float(epoch),
            "loss": float(np.mean(losses)),
            "lr": float(opt.lr),
            "train_ssim": float(train_ssim),
        }
        history.append(row)
        if verbose:
            print(
                f"epoch {epoch:4d}  loss {row['loss']:.6f}  lr {row['lr']:.2e}  ssim {row['train_ssim']:.4f}"
            )
    return history
