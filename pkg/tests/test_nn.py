import math

import numpy as np
import pytest

from taylorcast import tensor as tc
from taylorcast.nn import (
    AdamState,
    ConvSpec,
    PlateauScheduler,
    adam_init,
    adam_step,
    batch_moments,
    conv2d,
    conv3d,
    conv_transpose2d,
    conv_transpose3d,
    he_uniform,
    init_conv,
    leaky_relu,
    linear,
    sigmoid,
)
from taylorcast.tensor import NonFiniteError, Tensor, check_gradients


def conv3d_reference(x, w, b, stride, padding):
    """Direct 6-nested-loop cross-correlation oracle (zero padding)."""
    n, cin, t, h, wd = x.shape
    cout, _, kt, kh, kw = w.shape
    st, sh, sw = stride
    pt, ph, pw = padding
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)))
    to = (t + 2 * pt - kt) // st + 1
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (wd + 2 * pw - kw) // sw + 1
    out = np.zeros((n, cout, to, ho, wo))
    for ni in range(n):
        for co in range(cout):
            for ti in range(to):
                for hi in range(ho):
                    for wi in range(wo):
                        acc = 0.0
                        for ci in range(cin):
                            patch = xp[
                                ni,
                                ci,
                                ti * st : ti * st + kt,
                                hi * sh : hi * sh + kh,
                                wi * sw : wi * sw + kw,
                            ]
                            acc += float((patch * w[co, ci]).sum())
                        out[ni, co, ti, hi, wi] = acc + (b[co] if b is not None else 0.0)
    return out


def test_conv3d_all_ones_sums_to_nine():
    x = Tensor(np.ones((1, 1, 1, 3, 3)))
    w = Tensor(np.ones((1, 1, 1, 3, 3)))
    b = Tensor(np.zeros(1))
    spec = ConvSpec(kernel=(1, 3, 3), in_channels=1, out_channels=1)
    y = conv3d(x, w, b, spec)
    assert y.shape == (1, 1, 1, 1, 1)
    assert y.item() == 9.0


def test_conv3d_identity_kernel_same_padding():
    rng = np.random.default_rng(3)
    x = Tensor(rng.normal(size=(1, 1, 4, 5, 5)))
    w = np.zeros((1, 1, 3, 3, 3))
    w[0, 0, 1, 1, 1] = 1.0
    spec = ConvSpec(kernel=(3, 3, 3), padding=(1, 1, 1), in_channels=1, out_channels=1)
    y = conv3d(x, Tensor(w), Tensor(np.zeros(1)), spec)
    np.testing.assert_array_equal(y.data, x.data)


def test_conv3d_matches_brute_force_oracle():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(1, 2, 4, 5, 5))
    spec = ConvSpec(kernel=(3, 3, 3), stride=(1, 2, 1), padding=(1, 0, 1), in_channels=2, out_channels=3)
    w = rng.normal(size=spec.weight_shape())
    b = rng.normal(size=3)
    y = conv3d(Tensor(x), Tensor(w), Tensor(b), spec)
    ref = conv3d_reference(x, w, b, spec.stride, spec.padding)
    assert np.abs(y.data - ref).max() < 1e-12


def test_conv3d_stride1_same_padding_preserves_extents():
    x = Tensor(np.zeros((2, 3, 5, 8, 6)))
    spec = ConvSpec(kernel=(3, 3, 3), padding=(1, 1, 1), in_channels=3, out_channels=4)
    assert conv3d(x, Tensor(np.zeros(spec.weight_shape())), Tensor(np.zeros(4)), spec).shape == (2, 4, 5, 8, 6)


def test_conv3d_shape_violations():
    spec = ConvSpec(kernel=(3, 3, 3), in_channels=2, out_channels=1)
    with pytest.raises(ValueError):
        conv3d(Tensor(np.zeros((1, 1, 4, 4, 4))), Tensor(np.zeros(spec.weight_shape())), None, spec)
    with pytest.raises(ValueError):
        spec.out_extents((2, 2, 2))  # kernel larger than input


@pytest.mark.parametrize(
    "kernel,stride,padding,mode",
    [
        ((2, 3, 3), (1, 1, 1), (0, 1, 1), "zeros"),
        ((3, 3, 3), (1, 2, 2), (1, 1, 1), "zeros"),
        ((3, 3, 3), (1, 1, 1), (1, 1, 1), "circular"),
    ],
)
def test_conv3d_gradients(kernel, stride, padding, mode):
    rng = np.random.default_rng(5)
    spec = ConvSpec(kernel=kernel, stride=stride, padding=padding, in_channels=2, out_channels=2, padding_mode=mode)
    x = rng.normal(size=(1, 2, 4, 6, 6))
    w = rng.normal(size=spec.weight_shape()) * 0.3
    b = rng.normal(size=2) * 0.1

    assert check_gradients(lambda t: conv3d(t, Tensor(w), Tensor(b), spec), Tensor(x)) < 1e-4
    assert check_gradients(lambda t: conv3d(Tensor(x), t, Tensor(b), spec), Tensor(w)) < 1e-4
    assert check_gradients(lambda t: conv3d(Tensor(x), Tensor(w), t, spec), Tensor(b)) < 1e-4


@pytest.mark.parametrize(
    "kernel,stride,padding,mode",
    [
        ((1, 4, 4), (1, 2, 2), (0, 1, 1), "zeros"),
        ((3, 3, 3), (1, 1, 1), (1, 1, 1), "zeros"),
        ((3, 3, 3), (2, 2, 2), (1, 1, 1), "circular"),
    ],
)
def test_conv_transpose_is_adjoint_of_conv(kernel, stride, padding, mode):
    rng = np.random.default_rng(9)
    spec = ConvSpec(kernel=kernel, stride=stride, padding=padding, in_channels=3, out_channels=2, padding_mode=mode)
    x = rng.normal(size=(2, 3, 4, 8, 8))
    out_extents = spec.out_extents(x.shape[2:])
    # remainder dropped by the strided conv; the adjoint restores it as zeros
    opad = tuple((n + 2 * p - k) % s for n, k, s, p in zip(x.shape[2:], kernel, stride, padding))
    y = rng.normal(size=(2, 2) + out_extents)
    w = rng.normal(size=spec.weight_shape())
    lhs = float((conv3d(Tensor(x), Tensor(w), None, spec).data * y).sum())
    rhs = float((x * conv_transpose3d(Tensor(y), Tensor(w), None, spec, output_padding=opad).data).sum())
    assert abs(lhs - rhs) < 1e-10


def test_conv_transpose_output_extents_and_gradients():
    rng = np.random.default_rng(13)
    spec = ConvSpec(kernel=(1, 4, 4), stride=(1, 2, 2), padding=(0, 1, 1), in_channels=3, out_channels=2)
    x = rng.normal(size=(1, 2, 2, 3, 3))
    w = rng.normal(size=spec.weight_shape()) * 0.3
    b = rng.normal(size=3) * 0.1
    y = conv_transpose3d(Tensor(x), Tensor(w), Tensor(b), spec)
    assert y.shape == (1, 3, 2, 6, 6)  # (3-1)*2 - 2 + 4 = 6 spatially

    assert check_gradients(lambda t: conv_transpose3d(t, Tensor(w), Tensor(b), spec), Tensor(x)) < 1e-4
    assert check_gradients(lambda t: conv_transpose3d(Tensor(x), t, Tensor(b), spec), Tensor(w)) < 1e-4
    assert check_gradients(lambda t: conv_transpose3d(Tensor(x), Tensor(w), t, spec), Tensor(b)) < 1e-4


def test_conv_transpose_round_trip_extents_with_output_padding():
    # stride-2 conv maps 8 -> 4 dropping a remainder row; output_padding restores it
    spec = ConvSpec(kernel=(1, 3, 3), stride=(1, 2, 2), padding=(0, 1, 1), in_channels=1, out_channels=1)
    x = Tensor(np.zeros((1, 1, 1, 8, 8)))
    y = conv3d(x, Tensor(np.zeros(spec.weight_shape())), None, spec)
    assert y.shape[-2:] == (4, 4)
    z = conv_transpose3d(y, Tensor(np.zeros(spec.weight_shape())), None, spec, output_padding=(0, 1, 1))
    assert z.shape[-2:] == (8, 8)
    # exact inverse extents (7 -> 4) need no output padding
    y7 = conv3d(Tensor(np.zeros((1, 1, 1, 7, 7))), Tensor(np.zeros(spec.weight_shape())), None, spec)
    assert y7.shape[-2:] == (4, 4)
    z7 = conv_transpose3d(y7, Tensor(np.zeros(spec.weight_shape())), None, spec)
    assert z7.shape[-2:] == (7, 7)


def test_conv2d_matches_conv3d_with_unit_time():
    rng = np.random.default_rng(2)
    spec = ConvSpec(kernel=(1, 3, 3), padding=(0, 1, 1), in_channels=2, out_channels=3)
    x = rng.normal(size=(2, 2, 6, 5))
    w = rng.normal(size=spec.weight_shape())
    b = rng.normal(size=3)
    y2 = conv2d(Tensor(x), Tensor(w), Tensor(b), spec)
    y3 = conv3d(Tensor(x[:, :, None]), Tensor(w), Tensor(b), spec)
    np.testing.assert_array_equal(y2.data, y3.data[:, :, 0])


def test_conv_transpose2d_shapes():
    spec = ConvSpec(kernel=(1, 4, 4), stride=(1, 2, 2), padding=(0, 1, 1), in_channels=4, out_channels=8)
    x = Tensor(np.zeros((1, 8, 4, 4)))
    y = conv_transpose2d(x, Tensor(np.zeros(spec.weight_shape())), Tensor(np.zeros(4)), spec)
    assert y.shape == (1, 4, 8, 8)


def test_activation_gradients():
    rng = np.random.default_rng(21)
    x = rng.normal(size=(3, 4)) + 0.05  # keep clear of the leaky-ReLU kink
    assert check_gradients(lambda t: leaky_relu(t, 0.2), Tensor(x)) < 1e-6
    assert check_gradients(sigmoid, Tensor(x)) < 1e-6


def test_linear_and_moments_gradients():
    rng = np.random.default_rng(22)
    x = rng.normal(size=(4, 3))
    w = rng.normal(size=(3, 2))
    b = rng.normal(size=2)
    assert check_gradients(lambda t: linear(t, Tensor(w), Tensor(b)), Tensor(x)) < 1e-6

    def moments_objective(t):
        mean, var = batch_moments(t, axes=(0,))
        return (mean * mean + var).sum()

    assert check_gradients(moments_objective, Tensor(x)) < 1e-6


def test_he_uniform_bounds_and_determinism():
    rng = np.random.default_rng(4)
    w = he_uniform(rng, (64, 64), fan_in=64, slope=0.2)
    bound = math.sqrt(2.0 / 1.04) * math.sqrt(3.0 / 64)
    assert np.abs(w).max() <= bound
    again = he_uniform(np.random.default_rng(4), (64, 64), fan_in=64, slope=0.2)
    np.testing.assert_array_equal(w, again)


def test_init_conv_shapes():
    spec = ConvSpec(kernel=(3, 3, 3), in_channels=2, out_channels=5)
    w, b = init_conv(np.random.default_rng(0), spec)
    assert w.shape == (5, 2, 3, 3, 3)
    assert b.shape == (5,)
    wt, bt = init_conv(np.random.default_rng(0), spec, transposed=True)
    assert bt.shape == (2,)


# -- Adam -------------------------------------------------------------------


def test_adam_zero_gradient_leaves_params_unchanged():
    p = {"w": Tensor(np.array([1.0, -2.0]), requires_grad=True)}
    state = adam_init(p, lr=0.1)
    adam_step(p, {"w": np.zeros(2)}, state)
    np.testing.assert_array_equal(p["w"].data, [1.0, -2.0])
    assert state.t == 1


def test_adam_first_step_is_bias_corrected_unit_step():
    # p=0, g=1, lr=0.1: m_hat=1, v_hat=1 -> p = -0.1/(1+eps)
    p = {"w": Tensor(np.array([0.0]), requires_grad=True)}
    state = adam_init(p, lr=0.1)
    adam_step(p, {"w": np.array([1.0])}, state)
    expected = -0.1 / (1.0 + 1e-8)
    assert p["w"].data[0] == pytest.approx(expected, rel=1e-12)
    assert p["w"].data[0] == pytest.approx(-0.1, abs=1e-8)


def test_adam_is_deterministic_across_identical_params():
    grads = {"a": np.array([0.3, -0.7]), "b": np.array([0.3, -0.7])}
    p = {
        "a": Tensor(np.array([1.0, 2.0]), requires_grad=True),
        "b": Tensor(np.array([1.0, 2.0]), requires_grad=True),
    }
    state = adam_init(p, lr=0.05)
    for _ in range(3):
        adam_step(p, grads, state)
    np.testing.assert_array_equal(p["a"].data, p["b"].data)


def test_adam_rejects_non_finite_gradients():
    p = {"w": Tensor(np.array([0.0]), requires_grad=True)}
    state = adam_init(p)
    with pytest.raises(NonFiniteError):
        adam_step(p, {"w": np.array([np.nan])}, state)
    np.testing.assert_array_equal(p["w"].data, [0.0])  # untouched
    assert state.t == 0


def test_adam_moment_shapes_match_params():
    p = {"w": Tensor(np.zeros((2, 3)), requires_grad=True)}
    state = adam_init(p)
    assert state.m["w"].shape == (2, 3)
    assert state.v["w"].shape == (2, 3)


# -- Plateau scheduler --------------------------------------------------------


def test_scheduler_improving_stream_keeps_lr():
    sched = PlateauScheduler(factor=0.5, patience=2, mode="max")
    lr = 1e-4
    for metric in (0.1, 0.2, 0.3, 0.4):
        lr = sched.step(metric, lr)
    assert lr == 1e-4


def test_scheduler_halves_after_patience_plus_one_flat_epochs():
    sched = PlateauScheduler(factor=0.5, patience=2, mode="max")
    lr = 1e-4
    lr = sched.step(0.5, lr)
    for _ in range(3):  # patience + 1 non-improving epochs
        lr = sched.step(0.5, lr)
    assert lr == 5e-5


def test_scheduler_two_consecutive_plateaus():
    sched = PlateauScheduler(factor=0.5, patience=1, mode="max")
    lr = 1e-4
    lr = sched.step(1.0, lr)
    for _ in range(2):
        lr = sched.step(1.0, lr)
    assert lr == 5e-5
    for _ in range(2):
        lr = sched.step(1.0, lr)
    assert lr == 2.5e-5


def test_scheduler_never_increases_lr():
    sched = PlateauScheduler(factor=0.5, patience=0, mode="min")
    rng = np.random.default_rng(17)
    lr = 1.0
    history = [lr]
    for _ in range(50):
        lr = sched.step(float(rng.normal()), lr)
        history.append(lr)
    assert all(b <= a for a, b in zip(history, history[1:]))


def test_scheduler_rejects_non_finite_metric():
    sched = PlateauScheduler()
    with pytest.raises(ValueError):
        sched.step(float("nan"), 1e-4)
