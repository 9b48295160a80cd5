"""Ground-truth laboratory on analytic functions.

Families with closed-form derivatives (sin, cos, exp, and the multivariate
field sin(x+y+t)) supply observation windows whose future is exactly known.
Small estimators mirroring the derivative-chain architecture are trained only
to predict future values; how close their inferred expansion coefficients land
to the true derivatives is then measured directly.

Training is two-phase: Adam learns the chain features, then the linear heads
are re-solved exactly by least squares on the same value-matching objective.
The head subspace is badly conditioned (high orders trade off against each
other), so gradient descent alone crawls along those directions; the closed
form lands on the optimum they share.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import nn
from .baselines import euler_rollout
from .model import taylor_evaluate
from .seeding import rng_for
from .tensor import Tape, Tensor, backward, tsum

FAMILY_KINDS = ("sin", "cos", "exp", "sin2d")

T_STAR = 1.52  # held-out evaluation point used by the derivative table


@dataclass(frozen=True)
class AnalyticFamily:
    kind: str = "sin"
    dt: float = 0.15
    window: int = 16
    grid: tuple[int, int] = (16, 16)
    dx: float = math.pi / 4  # sin2d spatial step; period 8 px keeps 16px grids periodic

    def __post_init__(self):
        if self.kind not in FAMILY_KINDS:
            raise ValueError(f"kind must be one of {FAMILY_KINDS}")
        if self.dt <= 0 or self.window < 2:
            raise ValueError("need dt > 0 and window >= 2")

    @property
    def domain(self) -> tuple[float, float]:
        return (0.0, 2.0) if self.kind == "exp" else (0.0, 2.0 * math.pi)

    @property
    def is_field(self) -> bool:
        return self.kind == "sin2d"


_SIN_CYCLE = (np.sin, np.cos, lambda t: -np.sin(t), lambda t: -np.cos(t))


def _scalar_derivative(kind: str, t: float, order: int) -> float:
    """order-th derivative (order 0 = the value itself)."""
    if kind == "exp":
        return float(np.exp(t))
    offset = 1 if kind == "cos" else 0  # cos = sin shifted one cycle step
    return float(_SIN_CYCLE[(order + offset) % 4](t))


def analytic_value(family: AnalyticFamily, t: float):
    if family.is_field:
        h, w = family.grid
        x = np.arange(w) * family.dx
        y = np.arange(h) * family.dx
        return np.sin(y[:, None] + x[None, :] + t)
    return _scalar_derivative(family.kind, t, 0)


def analytic_derivatives(family: AnalyticFamily, t: float, n_max: int):
    """Exact derivatives 1..n_max at t (arrays for the sin2d field)."""
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    if family.is_field:
        h, w = family.grid
        x = np.arange(w) * family.dx
        y = np.arange(h) * family.dx
        phase = y[:, None] + x[None, :] + t
        return [_SIN_CYCLE[n % 4](phase) for n in range(1, n_max + 1)]
    return [_scalar_derivative(family.kind, t, n) for n in range(1, n_max + 1)]


def sample_window(family: AnalyticFamily, t0: float, k: int | None = None, dt: float | None = None):
    """Observations at t0-(k-1)dt, ..., t0 ([k] scalars or [k, H, W] frames)."""
    k = family.window if k is None else k
    dt = family.dt if dt is None else dt
    if k < 1 or dt <= 0:
        raise ValueError("need k >= 1 and dt > 0")
    times = t0 - dt * np.arange(k - 1, -1, -1)
    if family.is_field:
        return np.stack([analytic_value(family, float(t)) for t in times])
    return np.array([analytic_value(family, float(t)) for t in times])


def default_tau_grid(tau_max: float = 2.0, step: float = 0.1) -> list[float]:
    """Integer-and-fractional targets covering (0, tau_max]."""
    return [round(step * i, 10) for i in range(1, int(round(tau_max / step)) + 1)]


def training_windows(family: AnalyticFamily, n: int, taus, seed: int = 0):
    """Windows ending at uniformly random t0 plus their future values."""
    rng = rng_for(seed, f"lab-{family.kind}")
    lo, hi = family.domain
    t0s = rng.uniform(lo, hi, size=n)
    X = np.stack([sample_window(family, float(t0)) for t0 in t0s])
    y = np.stack([[analytic_value(family, float(t0 + tau)) for tau in taus] for t0 in t0s])
    return X, y


# ---------------------------------------------------------------------------
# 1-D estimator: dense mirror of the delta-block recursion
# ---------------------------------------------------------------------------


class DerivativeSeriesEstimator(BaseEstimator):
    """Learns expansion coefficients of a scalar trajectory from a window.

    The window itself is the latent state: delta_0 is its last sample, and
    each order applies a two-layer dense block to the running state before a
    zero-initialized linear head (with a direct window bypass) reads the
    derivative out — the dense counterpart of the convolutional chain.
    """

    def __init__(
        self,
        gamma: int = 8,
        hidden: int = 48,
        tau_scale: float = 2.0,
        lr: float = 3e-3,
        epochs: int = 150,
        batch_size: int = 64,
        seed: int = 0,
        refit_heads: bool = True,
    ):
        self.gamma = gamma
        self.hidden = hidden
        self.tau_scale = tau_scale
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.refit_heads = refit_heads

    def _gain(self, n: int) -> float:
        return math.factorial(n) / self.tau_scale**n

    def _build(self, k: int) -> dict[str, Tensor]:
        rng = rng_for(self.seed, "series-init")
        params: dict[str, Tensor] = {}
        for n in range(1, self.gamma + 1):
            w1, b1 = nn.init_linear(rng, k, self.hidden)
            w2, b2 = nn.init_linear(rng, self.hidden, k)
            hw, hb = nn.init_linear(rng, k, 1)
            hw.data[:] = 0.0
            pw, _ = nn.init_linear(rng, k, 1)
            pw.data[:] = 0.0
            params.update(
                {
                    f"d{n}.w1": w1,
                    f"d{n}.b1": b1,
                    f"d{n}.w2": w2,
                    f"d{n}.b2": b2,
                    f"h{n}.w": hw,
                    f"h{n}.b": hb,
                    f"p{n}.w": pw,
                }
            )
        return params

    def _chain_states(self, x: Tensor) -> list[Tensor]:
        states = []
        state = x
        for n in range(1, self.gamma + 1):
            state = nn.leaky_relu(nn.linear(state, self.params_[f"d{n}.w1"], self.params_[f"d{n}.b1"]), 0.2)
            state = nn.leaky_relu(nn.linear(state, self.params_[f"d{n}.w2"], self.params_[f"d{n}.b2"]), 0.2)
            states.append(state)
        return states

    def _coefficients(self, x: Tensor) -> list[Tensor]:
        states = self._chain_states(x)
        delta = [x[:, x.shape[1] - 1]]  # last observation, shape [B]
        for n in range(1, self.gamma + 1):
            head = nn.linear(states[n - 1], self.params_[f"h{n}.w"], self.params_[f"h{n}.b"])
            head = head + nn.linear(x, self.params_[f"p{n}.w"])
            delta.append(head.reshape((head.shape[0],)) * self._gain(n))
        return delta

    def fit(self, X, y, taus):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        taus = [float(t) for t in taus]
        if X.ndim != 2 or y.shape != (X.shape[0], len(taus)):
            raise ValueError(f"bad shapes: X {X.shape}, y {y.shape}, {len(taus)} taus")
        self.params_ = self._build(X.shape[1])
        opt = nn.adam_init(self.params_, lr=self.lr)
        n = X.shape[0]
        self.loss_curve_ = []
        for epoch in range(self.epochs):
            order = rng_for(self.seed, f"series-epoch-{epoch}").permutation(n)
            losses = []
            for lo in range(0, n, self.batch_size):
                idx = order[lo : lo + self.batch_size]
                losses.append(self._step(X[idx], y[idx], taus, opt))
            self.loss_curve_.append(float(np.mean(losses)))
            if not math.isfinite(self.loss_curve_[-1]):
                raise FloatingPointError("derivative-estimator training diverged")
        if self.refit_heads:
            self._solve_heads(X, y, taus)
        return self

    def _step(self, xb, yb, taus, opt) -> float:
        with Tape() as tape:
            delta = self._coefficients(Tensor(xb))
            total = None
            for j, tau in enumerate(taus):
                pred = taylor_evaluate(delta, tau)
                diff = pred - Tensor(yb[:, j])
                term = tsum(diff * diff)
                total = term if total is None else total + term
            loss = total * (1.0 / yb.size)
        grads_by_uid = backward(tape, Tensor(np.asarray(1.0)))
        grads = {
            name: grads_by_uid[p.uid].data if p.uid in grads_by_uid else np.zeros_like(p.data)
            for name, p in self.params_.items()
        }
        nn.adam_step(self.params_, grads, opt)
        return loss.item()

    def _solve_heads(self, X, y, taus) -> None:
        """Exact least-squares for the head/bypass weights given the chain."""
        k = X.shape[1]
        states = [s.data for s in self._chain_states(Tensor(X))]
        feats = [np.concatenate([states[n - 1], X, np.ones((X.shape[0], 1))], axis=1) for n in range(1, self.gamma + 1)]
        fdim = 2 * k + 1
        tau_arr = np.asarray(taus)
        n_rows = X.shape[0] * len(taus)
        design = np.zeros((n_rows, self.gamma * fdim))
        for n in range(1, self.gamma + 1):
            weights = self._gain(n) * tau_arr**n / math.factorial(n)
            block = (feats[n - 1][:, None, :] * weights[None, :, None]).reshape(n_rows, fdim)
            design[:, (n - 1) * fdim : n * fdim] = block
        target = (y - X[:, -1][:, None]).reshape(-1)
        solution, *_ = np.linalg.lstsq(design, target, rcond=None)
        for n in range(1, self.gamma + 1):
            u = solution[(n - 1) * fdim : n * fdim]
            self.params_[f"h{n}.w"].data[:, 0] = u[:k]
            self.params_[f"p{n}.w"].data[:, 0] = u[k : 2 * k]
            self.params_[f"h{n}.b"].data[0] = u[2 * k]

    def predict_coefficients(self, X) -> np.ndarray:
        """Inferred delta_0..delta_gamma for each window, shape [N, gamma+1]."""
        check_is_fitted(self, "params_")
        X = np.asarray(X, dtype=np.float64)
        delta = self._coefficients(Tensor(X))
        return np.stack([d.data for d in delta], axis=1)

    def predict(self, X, taus) -> np.ndarray:
        check_is_fitted(self, "params_")
        X = np.asarray(X, dtype=np.float64)
        delta = self._coefficients(Tensor(X))
        return np.stack([taylor_evaluate(delta, float(t)).data for t in taus], axis=1)


# ---------------------------------------------------------------------------
# 2-D estimator: convolutional chain on frame windows (periodic padding)
# ---------------------------------------------------------------------------


class FieldSeriesEstimator(BaseEstimator):
    """Derivative chain over [k, H, W] frame windows of a periodic field.

    Heads are (window x 3 x 3) convolutions reading each order out of the
    chain, plus a per-pixel temporal-column bypass; both start at zero.
    """

    def __init__(
        self,
        gamma: int = 6,
        channels: int = 6,
        window: int = 8,
        tau_scale: float = 2.0,
        lr: float = 2e-3,
        epochs: int = 40,
        batch_size: int = 8,
        seed: int = 0,
        padding_mode: str = "circular",
        refit_heads: bool = True,
    ):
        self.gamma = gamma
        self.channels = channels
        self.window = window
        self.tau_scale = tau_scale
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.padding_mode = padding_mode
        self.refit_heads = refit_heads

    def _gain(self, n: int) -> float:
        return math.factorial(n) / self.tau_scale**n

    def _specs(self):
        m = self.channels
        lift = nn.ConvSpec((3, 3, 3), (1, 1, 1), (1, 1, 1), 1, m, self.padding_mode)
        block = nn.ConvSpec((3, 3, 3), (1, 1, 1), (1, 1, 1), m, m, self.padding_mode)
        head = nn.ConvSpec((self.window, 3, 3), (1, 1, 1), (0, 1, 1), m, 1, self.padding_mode)
        bypass = nn.ConvSpec((self.window, 1, 1), (1, 1, 1), (0, 0, 0), 1, 1)
        return lift, block, head, bypass

    def _build(self) -> dict[str, Tensor]:
        rng = rng_for(self.seed, "field-init")
        lift, block, head, bypass = self._specs()
        params: dict[str, Tensor] = {}

        def register(name, w, b):
            params[f"{name}.w"] = w
            params[f"{name}.b"] = b

        for n in range(1, self.gamma + 1):
            register(f"d{n}.c1", *nn.init_conv(rng, lift if n == 1 else block))
            register(f"d{n}.c2", *nn.init_conv(rng, block))
            hw, hb = nn.init_conv(rng, head)
            hw.data[:] = 0.0
            register(f"h{n}", hw, hb)
            pw, pb = nn.init_conv(rng, bypass)
            pw.data[:] = 0.0
            register(f"p{n}", pw, pb)
        return params

    def _chain_states(self, x: Tensor) -> list[Tensor]:
        lift, block, _, _ = self._specs()
        states = []
        state = x
        for n in range(1, self.gamma + 1):
            spec1 = lift if n == 1 else block
            state = nn.leaky_relu(nn.conv3d(state, self.params_[f"d{n}.c1.w"], self.params_[f"d{n}.c1.b"], spec1), 0.2)
            state = nn.leaky_relu(nn.conv3d(state, self.params_[f"d{n}.c2.w"], self.params_[f"d{n}.c2.b"], block), 0.2)
            states.append(state)
        return states

    def _coefficients(self, x: Tensor) -> list[Tensor]:
        _, _, head, bypass = self._specs()
        states = self._chain_states(x)
        delta = [x[:, 0, x.shape[2] - 1]]  # last frame, [B, H, W]
        for n in range(1, self.gamma + 1):
            out = nn.conv3d(states[n - 1], self.params_[f"h{n}.w"], self.params_[f"h{n}.b"], head)
            out = out + nn.conv3d(x, self.params_[f"p{n}.w"], self.params_[f"p{n}.b"], bypass)
            delta.append(out[:, 0, 0] * self._gain(n))
        return delta

    def fit(self, X, y, taus):
        X = np.asarray(X, dtype=np.float64)  # [N, k, H, W]
        y = np.asarray(y, dtype=np.float64)  # [N, M, H, W]
        taus = [float(t) for t in taus]
        if X.ndim != 4 or y.shape[1] != len(taus):
            raise ValueError(f"bad shapes: X {X.shape}, y {y.shape}")
        self.params_ = self._build()
        opt = nn.adam_init(self.params_, lr=self.lr)
        n = X.shape[0]
        self.loss_curve_ = []
        for epoch in range(self.epochs):
            order = rng_for(self.seed, f"field-epoch-{epoch}").permutation(n)
            losses = []
            for lo in range(0, n, self.batch_size):
                idx = order[lo : lo + self.batch_size]
                losses.append(self._step(X[idx], y[idx], taus, opt))
            self.loss_curve_.append(float(np.mean(losses)))
            if not math.isfinite(self.loss_curve_[-1]):
                raise FloatingPointError("field-estimator training diverged")
        if self.refit_heads:
            self._solve_heads(X, y, taus)
        return self

    def _step(self, xb, yb, taus, opt) -> float:
        with Tape() as tape:
            delta = self._coefficients(Tensor(xb[:, None]))
            total = None
            for j, tau in enumerate(taus):
                pred = taylor_evaluate(delta, tau)
                diff = pred - Tensor(yb[:, j])
                term = tsum(diff * diff)
                total = term if total is None else total + term
            loss = total * (1.0 / yb.size)
        grads_by_uid = backward(tape, Tensor(np.asarray(1.0)))
        grads = {
            name: grads_by_uid[p.uid].data if p.uid in grads_by_uid else np.zeros_like(p.data)
            for name, p in self.params_.items()
        }
        nn.adam_step(self.params_, grads, opt)
        return loss.item()

    def _solve_heads(self, X, y, taus) -> None:
        """Per-order least squares over [trained head output, pixel column, 1].

        The trained conv head enters as a single scalable feature, so its
        learned spatial structure is kept; the per-pixel temporal bypass can
        realize the exact solution for separable fields like sin(x+y+t).
        """
        _, _, head_spec, _ = self._specs()
        k = self.window
        n_clips, _, h, w = X.shape
        head_outs = []
        states = self._chain_states(Tensor(X[:, None]))
        for n in range(1, self.gamma + 1):
            out = nn.conv3d(states[n - 1], self.params_[f"h{n}.w"], self.params_[f"h{n}.b"], head_spec)
            head_outs.append(out.data[:, 0, 0])  # [N, H, W]

        tau_arr = np.asarray(taus)
        n_rows = n_clips * len(taus) * h * w
        fdim = k + 2  # alpha * head output, k-column bypass, bias
        design = np.zeros((n_rows, self.gamma * fdim))
        columns = np.moveaxis(X, 1, 3).reshape(n_clips, 1, h, w, k)
        for n in range(1, self.gamma + 1):
            weights = self._gain(n) * tau_arr**n / math.factorial(n)  # [M]
            feat = np.concatenate(
                [
                    np.broadcast_to(head_outs[n - 1][:, None, :, :, None], (n_clips, len(taus), h, w, 1)),
                    np.broadcast_to(columns, (n_clips, len(taus), h, w, k)),
                    np.ones((n_clips, len(taus), h, w, 1)),
                ],
                axis=4,
            ) * weights[None, :, None, None, None]
            design[:, (n - 1) * fdim : n * fdim] = feat.reshape(n_rows, fdim)
        target = (y - X[:, -1][:, None]).reshape(-1)
        solution, *_ = np.linalg.lstsq(design, target, rcond=None)
        for n in range(1, self.gamma + 1):
            u = solution[(n - 1) * fdim : n * fdim]
            self.params_[f"h{n}.w"].data *= u[0]
            self.params_[f"h{n}.b"].data *= u[0]
            self.params_[f"p{n}.w"].data[0, 0, :, 0, 0] = u[1 : 1 + k]
            self.params_[f"p{n}.b"].data[0] = u[1 + k]

    def predict_coefficients(self, X) -> np.ndarray:
        """[N, gamma+1, H, W] inferred coefficient maps."""
        check_is_fitted(self, "params_")
        X = np.asarray(X, dtype=np.float64)
        delta = self._coefficients(Tensor(X[:, None]))
        return np.stack([d.data for d in delta], axis=1)


# ---------------------------------------------------------------------------
# Experiment drivers
# ---------------------------------------------------------------------------


def fit_derivative_estimator(
    family: AnalyticFamily,
    gamma: int = 8,
    n_train: int = 512,
    epochs: int | None = None,
    seed: int = 0,
    t_star: float = T_STAR,
):
    """Train an estimator on future values only, then report how close its
    coefficients at the held-out point come to the true derivatives.

    Returns (estimator, report); report rows cover orders 1..4 like the
    reference table.
    """
    taus = default_tau_grid()
    if family.is_field:
        est = FieldSeriesEstimator(gamma=min(gamma, 6), window=family.window, seed=seed)
        if epochs is not None:
            est.epochs = epochs
        X, y = training_windows(family, max(n_train // 8, 32), taus, seed=seed)
        est.fit(X, y, taus)
        coeffs = est.predict_coefficients(sample_window(family, t_star)[None])[0]
        truth = analytic_derivatives(family, t_star, 4)
        report = {
            "t_star": t_star,
            "orders": [
                {
                    "order": n,
                    "mean_abs_error": float(np.abs(coeffs[n] - truth[n - 1]).mean()),
                    "max_abs_error": float(np.abs(coeffs[n] - truth[n - 1]).max()),
                }
                for n in range(1, 5)
            ],
            "final_loss": est.loss_curve_[-1],
        }
        return est, report

    est = DerivativeSeriesEstimator(gamma=gamma, seed=seed)
    if epochs is not None:
        est.epochs = epochs
    X, y = training_windows(family, n_train, taus, seed=seed)
    est.fit(X, y, taus)
    coeffs = est.predict_coefficients(sample_window(family, t_star)[None])[0]
    truth = analytic_derivatives(family, t_star, 4)
    rows = []
    for n in range(1, 5):
        estimated = float(coeffs[n])
        exact = float(truth[n - 1])
        rows.append(
            {
                "order": n,
                "estimated": estimated,
                "analytic": exact,
                "abs_error": abs(estimated - exact),
                "rel_error": abs(estimated - exact) / abs(exact),
            }
        )
    report = {"t_star": t_star, "orders": rows, "final_loss": est.loss_curve_[-1]}
    return est, report


def taylor_prediction(family: AnalyticFamily, t0: float, tau: float, gamma: int) -> float:
    derivs = analytic_derivatives(family, t0, gamma)
    value = analytic_value(family, t0)
    return float(value + sum(derivs[n - 1] * tau**n / math.factorial(n) for n in range(1, gamma + 1)))


def compare_euler_taylor(
    family: AnalyticFamily,
    t0: float = 4.75,
    horizon: float = 2.0,
    gamma: int = 4,
    euler_dt: float = 0.25,
) -> list[dict[str, float]]:
    """Error curves of the order-gamma expansion vs forward Euler, both built
    from TRUE derivatives, on the grid tau = euler_dt, 2*euler_dt, ..., horizon.
    """
    if family.is_field:
        raise ValueError("euler/taylor comparison is defined for scalar families")
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    n_steps = int(round(horizon / euler_dt))

    def derivative(t, _h):
        return _scalar_derivative(family.kind, t, 1)

    trajectory = euler_rollout(analytic_value(family, t0), derivative, euler_dt, n_steps, t0=t0)
    rows = []
    for k in range(1, n_steps + 1):
        tau = k * euler_dt
        truth = analytic_value(family, t0 + tau)
        taylor = taylor_prediction(family, t0, tau, gamma)
        euler = float(trajectory[k])
        rows.append(
            {
                "tau": tau,
                "truth": truth,
                "taylor": taylor,
                "euler": euler,
                "abs_err_taylor": abs(taylor - truth),
                "abs_err_euler": abs(euler - truth),
            }
        )
    return rows
