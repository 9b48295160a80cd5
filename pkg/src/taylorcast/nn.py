"""Neural-net primitives on the autodiff tensor core.

3-D/2-D convolution and transposed convolution (im2col + BLAS matmul, with the
transposed op implemented as the exact adjoint of the forward one), leaky-ReLU
and sigmoid activations, dense layers, He-style initialization, the Adam
optimizer and a reduce-on-plateau learning-rate scheduler.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import NonFiniteError, Tensor, apply_op, matmul, tmean, tsum

Triple = tuple[int, int, int]


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of one (transposable) convolution.

    ``conv3d`` maps ``in_channels -> out_channels``; ``conv_transpose3d`` with
    the same spec and weights is its adjoint and maps ``out_channels ->
    in_channels``.
    """

    kernel: Triple
    stride: Triple = (1, 1, 1)
    padding: Triple = (0, 0, 0)
    in_channels: int = 1
    out_channels: int = 1
    padding_mode: str = "zeros"

    def __post_init__(self):
        for name in ("kernel", "stride", "padding"):
            v = getattr(self, name)
            if len(v) != 3 or any(int(x) != x for x in v):
                raise ValueError(f"{name} must be a triple of ints, got {v}")
        if any(k < 1 for k in self.kernel) or any(s < 1 for s in self.stride):
            raise ValueError("kernel and stride extents must be >= 1")
        if any(p < 0 for p in self.padding):
            raise ValueError("padding must be non-negative")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")
        if self.padding_mode not in ("zeros", "circular"):
            raise ValueError(f"unsupported padding mode {self.padding_mode!r}")

    def out_extents(self, in_extents: Triple) -> Triple:
        out = []
        for n, k, s, p in zip(in_extents, self.kernel, self.stride, self.padding):
            m = (n + 2 * p - k) // s + 1
            if n + 2 * p < k or m < 1:
                raise ValueError(
                    f"kernel {self.kernel} does not fit input extents {tuple(in_extents)} "
                    f"with padding {self.padding}"
                )
            out.append(m)
        return tuple(out)

    def weight_shape(self) -> tuple[int, ...]:
        return (self.out_channels, self.in_channels) + tuple(self.kernel)


# ---------------------------------------------------------------------------
# im2col / col2im machinery (shared by conv, transposed conv and both VJPs)
# ---------------------------------------------------------------------------


def _pad(x: np.ndarray, padding: Triple, mode: str) -> np.ndarray:
    if not any(padding):
        return x
    widths = ((0, 0), (0, 0)) + tuple((p, p) for p in padding)
    return np.pad(x, widths, mode="wrap" if mode == "circular" else "constant")


def _unpad_adjoint(g: np.ndarray, padding: Triple, mode: str) -> np.ndarray:
    """Adjoint of :func:`_pad`: crop, folding wrapped borders back first."""
    if not any(padding):
        return g
    if mode == "circular":
        # np.pad wraps axes front-to-back, so fold back-to-front.
        for axis in (4, 3, 2):
            p = padding[axis - 2]
            if p == 0:
                continue
            g = np.moveaxis(g, axis, 0)
            core = g[p : g.shape[0] - p].copy()
            core[-p:] += g[:p]
            core[:p] += g[g.shape[0] - p :]
            g = np.moveaxis(core, 0, axis)
        return np.ascontiguousarray(g)
    pT, pH, pW = padding
    return np.ascontiguousarray(
        g[:, :, pT : g.shape[2] - pT or None, pH : g.shape[3] - pH or None, pW : g.shape[4] - pW or None]
    )


def _im2col(xp: np.ndarray, kernel: Triple, stride: Triple) -> np.ndarray:
    """[N,C,Tp,Hp,Wp] -> [N*To*Ho*Wo, C*kT*kH*kW] patch matrix (copies)."""
    view = sliding_window_view(xp, kernel, axis=(2, 3, 4))
    view = view[:, :, :: stride[0], :: stride[1], :: stride[2]]
    n, c, to, ho, wo = view.shape[:5]
    cols = view.transpose(0, 2, 3, 4, 1, 5, 6, 7).reshape(n * to * ho * wo, c * math.prod(kernel))
    return np.ascontiguousarray(cols)


def _col2im(
    cols: np.ndarray,
    padded_shape: tuple[int, ...],
    kernel: Triple,
    stride: Triple,
    out_extents: Triple,
) -> np.ndarray:
    """Scatter-add patch rows back into a padded input buffer (im2col adjoint)."""
    n, c = padded_shape[:2]
    to, ho, wo = out_extents
    kT, kH, kW = kernel
    sT, sH, sW = stride
    patches = cols.reshape(n, to, ho, wo, c, kT, kH, kW).transpose(0, 4, 1, 2, 3, 5, 6, 7)
    buf = np.zeros(padded_shape, dtype=cols.dtype)
    for a in range(kT):
        for b in range(kH):
            for d in range(kW):
                buf[:, :, a : a + sT * to : sT, b : b + sH * ho : sH, d : d + sW * wo : sW] += patches[
                    ..., a, b, d
                ]
    return buf


# ---------------------------------------------------------------------------
# Convolution ops
# ---------------------------------------------------------------------------


def conv3d(x: Tensor, w: Tensor, b: Tensor | None, spec: ConvSpec) -> Tensor:
    """Cross-correlation of [N,Cin,T,H,W] with [Cout,Cin,kT,kH,kW] weights."""
    if x.ndim != 5:
        raise ValueError(f"conv3d expects [N,C,T,H,W], got {x.shape}")
    if x.shape[1] != spec.in_channels:
        raise ValueError(f"conv3d: input has {x.shape[1]} channels, spec expects {spec.in_channels}")
    if w.shape != spec.weight_shape():
        raise ValueError(f"conv3d: weight shape {w.shape} != spec {spec.weight_shape()}")
    if b is not None and b.shape != (spec.out_channels,):
        raise ValueError(f"conv3d: bias shape {b.shape} != ({spec.out_channels},)")

    n = x.shape[0]
    to, ho, wo = spec.out_extents(x.shape[2:])
    xp = _pad(x.data, spec.padding, spec.padding_mode)
    cols = _im2col(xp, spec.kernel, spec.stride)
    wmat = w.data.reshape(spec.out_channels, -1)
    out = cols @ wmat.T
    if b is not None:
        out += b.data
    out = np.ascontiguousarray(out.reshape(n, to, ho, wo, spec.out_channels).transpose(0, 4, 1, 2, 3))

    padded_shape = xp.shape

    def vjp(g):
        g2 = g.transpose(0, 2, 3, 4, 1).reshape(-1, spec.out_channels)
        gw = (g2.T @ cols).reshape(w.shape)
        gcols = g2 @ wmat
        gx = _unpad_adjoint(
            _col2im(gcols, padded_shape, spec.kernel, spec.stride, (to, ho, wo)),
            spec.padding,
            spec.padding_mode,
        )
        gb = g.sum(axis=(0, 2, 3, 4)) if b is not None else None
        return (gx, gw, gb) if b is not None else (gx, gw)

    inputs = (x, w, b) if b is not None else (x, w)
    return apply_op("conv3d", inputs, out, vjp)


def conv_transpose3d(
    x: Tensor, w: Tensor, b: Tensor | None, spec: ConvSpec, output_padding: Triple = (0, 0, 0)
) -> Tensor:
    """Adjoint of :func:`conv3d`: maps [N,Cout,To,Ho,Wo] -> [N,Cin,T,H,W].

    Output extents are ``(in-1)*stride - 2*padding + kernel + output_padding``.
    """
    if x.ndim != 5:
        raise ValueError(f"conv_transpose3d expects [N,C,T,H,W], got {x.shape}")
    if x.shape[1] != spec.out_channels:
        raise ValueError(
            f"conv_transpose3d: input has {x.shape[1]} channels, spec expects {spec.out_channels}"
        )
    if w.shape != spec.weight_shape():
        raise ValueError(f"conv_transpose3d: weight shape {w.shape} != spec {spec.weight_shape()}")
    if b is not None and b.shape != (spec.in_channels,):
        raise ValueError(f"conv_transpose3d: bias shape {b.shape} != ({spec.in_channels},)")
    if any(op < 0 or op >= s for op, s in zip(output_padding, spec.stride)):
        raise ValueError("output_padding must satisfy 0 <= op < stride per axis")

    n = x.shape[0]
    in_extents = x.shape[2:]
    out_extents = tuple(
        (m - 1) * s - 2 * p + k + op
        for m, s, p, k, op in zip(in_extents, spec.stride, spec.padding, spec.kernel, output_padding)
    )
    if any(e < 1 for e in out_extents):
        raise ValueError(f"conv_transpose3d: non-positive output extents {out_extents}")

    wmat = w.data.reshape(spec.out_channels, -1)
    x2 = x.data.transpose(0, 2, 3, 4, 1).reshape(-1, spec.out_channels)
    cols = x2 @ wmat
    padded_shape = (n, spec.in_channels) + tuple(e + 2 * p for e, p in zip(out_extents, spec.padding))
    buf = _col2im(cols, padded_shape, spec.kernel, spec.stride, in_extents)
    out = _unpad_adjoint(buf, spec.padding, spec.padding_mode)
    if b is not None:
        out = out + b.data.reshape(1, -1, 1, 1, 1)

    def vjp(g):
        gp = _pad(g, spec.padding, spec.padding_mode)
        gcols = _im2col(gp, spec.kernel, spec.stride)
        gx = np.ascontiguousarray(
            (gcols @ wmat.T).reshape(n, *in_extents, spec.out_channels).transpose(0, 4, 1, 2, 3)
        )
        gw = (x2.T @ gcols).reshape(w.shape)
        gb = g.sum(axis=(0, 2, 3, 4)) if b is not None else None
        return (gx, gw, gb) if b is not None else (gx, gw)

    inputs = (x, w, b) if b is not None else (x, w)
    return apply_op("conv_transpose3d", inputs, out, vjp)


def _lift2d(spec2d_kernel, spec2d_stride, spec2d_padding, cin, cout, mode) -> ConvSpec:
    return ConvSpec(
        kernel=(1,) + tuple(spec2d_kernel),
        stride=(1,) + tuple(spec2d_stride),
        padding=(0,) + tuple(spec2d_padding),
        in_channels=cin,
        out_channels=cout,
        padding_mode=mode,
    )


def conv2d(x: Tensor, w: Tensor, b: Tensor | None, spec: ConvSpec) -> Tensor:
    """2-D convolution of [N,C,H,W]; ``spec`` must have unit temporal geometry."""
    if spec.kernel[0] != 1 or spec.stride[0] != 1 or spec.padding[0] != 0:
        raise ValueError("conv2d spec must have kernel[0]=1, stride[0]=1, padding[0]=0")
    if x.ndim != 4:
        raise ValueError(f"conv2d expects [N,C,H,W], got {x.shape}")
    x3 = x.reshape((x.shape[0], x.shape[1], 1, x.shape[2], x.shape[3]))
    y = conv3d(x3, w, b, spec)
    return y.reshape((y.shape[0], y.shape[1], y.shape[3], y.shape[4]))


def conv_transpose2d(
    x: Tensor, w: Tensor, b: Tensor | None, spec: ConvSpec, output_padding: tuple[int, int] = (0, 0)
) -> Tensor:
    if spec.kernel[0] != 1 or spec.stride[0] != 1 or spec.padding[0] != 0:
        raise ValueError("conv_transpose2d spec must have kernel[0]=1, stride[0]=1, padding[0]=0")
    if x.ndim != 4:
        raise ValueError(f"conv_transpose2d expects [N,C,H,W], got {x.shape}")
    x3 = x.reshape((x.shape[0], x.shape[1], 1, x.shape[2], x.shape[3]))
    y = conv_transpose3d(x3, w, b, spec, output_padding=(0,) + tuple(output_padding))
    return y.reshape((y.shape[0], y.shape[1], y.shape[3], y.shape[4]))


# ---------------------------------------------------------------------------
# Activations and dense layers
# ---------------------------------------------------------------------------


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    mask = x.data >= 0
    out = np.where(mask, x.data, slope * x.data)
    return apply_op("leaky_relu", (x,), out, lambda g: (np.where(mask, g, slope * g),))


def sigmoid(x: Tensor) -> Tensor:
    v = x.data
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return apply_op("sigmoid", (x,), out, lambda g: (g * out * (1.0 - out),))


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Dense layer: [B, in] @ [in, out] (+ bias[out])."""
    y = matmul(x, w)
    if b is not None:
        y = y + b
    return y


def batch_moments(x: Tensor, axes: tuple[int, ...]) -> tuple[Tensor, Tensor]:
    """Differentiable (mean, biased variance) over ``axes``."""
    mean = tmean(x, axis=axes, keepdims=True)
    centered = x - mean
    var = tmean(centered * centered, axis=axes, keepdims=True)
    return mean, var


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------


def he_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, slope: float = 0.2) -> np.ndarray:
    gain = math.sqrt(2.0 / (1.0 + slope * slope))
    bound = gain * math.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_conv(rng: np.random.Generator, spec: ConvSpec, slope: float = 0.2, transposed: bool = False):
    """Weight/bias pair for a conv (or transposed conv) layer."""
    shape = spec.weight_shape()
    fan_in = (shape[0] if transposed else shape[1]) * math.prod(spec.kernel)
    w = Tensor(he_uniform(rng, shape, fan_in, slope), requires_grad=True)
    n_bias = spec.in_channels if transposed else spec.out_channels
    b = Tensor(np.zeros(n_bias), requires_grad=True)
    return w, b


def init_linear(rng: np.random.Generator, n_in: int, n_out: int, slope: float = 0.2):
    w = Tensor(he_uniform(rng, (n_in, n_out), n_in, slope), requires_grad=True)
    b = Tensor(np.zeros(n_out), requires_grad=True)
    return w, b


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_init(params: dict[str, Tensor], lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    for name, p in params.items():
        state.m[name] = np.zeros_like(p.data)
        state.v[name] = np.zeros_like(p.data)
    return state


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray | Tensor], state: AdamState):
    """One bias-corrected Adam update, in place on the parameter buffers."""
    resolved: dict[str, np.ndarray] = {}
    for name, p in params.items():
        g = grads[name]
        g = g.data if isinstance(g, Tensor) else np.asarray(g)
        if g.shape != p.shape:
            raise ValueError(f"gradient for '{name}' has shape {g.shape}, parameter has {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter '{name}'")
        resolved[name] = g

    state.t += 1
    c1 = 1.0 - state.beta1**state.t
    c2 = 1.0 - state.beta2**state.t
    for name, p in params.items():
        g = resolved[name]
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


# ---------------------------------------------------------------------------
# Reduce-on-plateau learning-rate schedule
# ---------------------------------------------------------------------------


@dataclass
class PlateauScheduler:
    """Multiply the rate by ``factor`` once the metric stalls past ``patience``.

    ``mode='max'`` treats larger metrics as better (e.g. SSIM); improvement is
    strict.  The rate never increases and each reduction is exactly
    ``lr * factor``.
    """

    factor: float = 0.5
    patience: int = 20
    mode: str = "max"
    best_metric: float | None = None
    epochs_since_improvement: int = 0

    def __post_init__(self):
        if not 0.0 < self.factor < 1.0:
            raise ValueError("factor must lie in (0, 1)")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")
        if self.mode not in ("max", "min"):
            raise ValueError("mode must be 'max' or 'min'")

    def step(self, metric: float, lr: float) -> float:
        metric = float(metric)
        if not math.isfinite(metric):
            raise ValueError("plateau metric must be finite")
        improved = (
            self.best_metric is None
            or (self.mode == "max" and metric > self.best_metric)
            or (self.mode == "min" and metric < self.best_metric)
        )
        if improved:
            self.best_metric = metric
            self.epochs_since_improvement = 0
            return lr
        self.epochs_since_improvement += 1
        if self.epochs_since_improvement > self.patience:
            self.epochs_since_improvement = 0
            return lr * self.factor
        return lr
