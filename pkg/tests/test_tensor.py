import io

import numpy as np
import pytest

from taylorcast import tensor as tc
from taylorcast.tensor import (
    NonFiniteError,
    Tape,
    TapeError,
    Tensor,
    backward,
    check_gradients,
    load_tensor,
    save_tensor,
)


def test_square_gradient():
    x = Tensor(3.0, requires_grad=True)
    with Tape() as tape:
        y = x * x
    grads = backward(tape, Tensor(1.0))
    assert grads[x.uid].item() == pytest.approx(6.0, abs=0)


def test_sum_of_squares_gradient():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        y = (x * x).sum()
    grads = backward(tape, Tensor(1.0))
    np.testing.assert_array_equal(grads[x.uid].data, [2.0, 4.0])


def test_mlp_gradients_match_finite_differences():
    rng = np.random.default_rng(7)
    arrs = [
        rng.normal(size=(3, 5)) * 0.5,
        rng.normal(size=5) * 0.1,
        rng.normal(size=(5, 4)) * 0.5,
        rng.normal(size=4) * 0.1,
        rng.normal(size=(4, 1)) * 0.5,
    ]
    x = Tensor(rng.normal(size=(2, 3)))

    def net(pieces):
        h = tc.tanh(x @ pieces[0] + pieces[1])
        h = tc.tanh(h @ pieces[2] + pieces[3])
        return (h @ pieces[4]).sum()

    # probe the gradient of every parameter against finite differences
    for index in range(len(arrs)):
        def as_function_of(p, index=index):
            pieces = [p if i == index else Tensor(arrs[i]) for i in range(len(arrs))]
            return net(pieces)

        err = check_gradients(as_function_of, Tensor(arrs[index].copy()), h=1e-5)
        assert err < 1e-4


def test_check_gradients_identity_is_machine_precision():
    x = Tensor([0.3, -1.7, 2.2])
    assert check_gradients(lambda t: t, x) < 1e-10


def test_check_gradients_sum_sin():
    x = Tensor([0.1, 0.2])
    assert check_gradients(lambda t: tc.sin(t).sum(), x) < 1e-6


@pytest.mark.parametrize("seed", range(5))
def test_random_op_graph_against_finite_differences(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    x0 = Tensor(rng.uniform(0.2, 1.5, size=n))

    unary = [tc.sin, tc.cos, tc.tanh, lambda t: tc.exp(t * 0.3), tc.sqrt, lambda t: t * t]
    binary = [lambda a, b: a + b, lambda a, b: a * b, lambda a, b: a - b * 0.5]

    def graph(x):
        values = [x]
        for _ in range(6):
            if rng.random() < 0.5 or len(values) < 2:
                op = unary[int(rng.integers(len(unary)))]
                values.append(op(values[int(rng.integers(len(values)))]))
            else:
                op = binary[int(rng.integers(len(binary)))]
                i, j = rng.integers(len(values), size=2)
                values.append(op(values[int(i)], values[int(j)]))
        total = values[-1]
        for v in values[:-1]:
            total = total + v
        return total.sum()

    state = rng.bit_generator.state
    def replayed(x):
        rng.bit_generator.state = state
        return graph(x)

    assert check_gradients(replayed, x0, h=1e-6) < 1e-4


def test_backward_is_pure():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    with Tape() as tape:
        y = (tc.sin(x) * x).sum()
    g1 = backward(tape, Tensor(1.0))[x.uid].data.copy()
    g2 = backward(tape, Tensor(1.0))[x.uid].data.copy()
    np.testing.assert_array_equal(g1, g2)


def test_zero_seed_gives_zero_gradients():
    x = Tensor([1.0, -2.0], requires_grad=True)
    with Tape() as tape:
        y = (tc.exp(x) * x).sum()
    grads = backward(tape, Tensor(0.0))
    np.testing.assert_array_equal(grads[x.uid].data, np.zeros(2))


def test_backward_empty_tape_raises():
    with pytest.raises(TapeError):
        backward(Tape(), Tensor(1.0))


def test_backward_seed_shape_mismatch():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        y = x * 2.0
    with pytest.raises(ValueError):
        backward(tape, Tensor([1.0, 2.0, 3.0]))


def test_non_finite_forward_raises():
    x = Tensor([-1.0])
    with pytest.raises(NonFiniteError):
        tc.log(x)


def test_non_finite_backward_names_op_index():
    x = Tensor([2.0], requires_grad=True)
    with Tape() as tape:
        y = tc.sqrt(x)
        z = y * 1.0
    with pytest.raises(NonFiniteError, match="op 1"):
        backward(tape, Tensor([np.nan]))


def test_nan_grad_error_reports_op_name():
    x = Tensor([1.0], requires_grad=True)
    with Tape() as tape:
        y = tc.exp(x)
    with pytest.raises(NonFiniteError, match="exp"):
        backward(tape, Tensor([np.inf]))


def test_grad_buffer_assigned_on_leaves():
    x = Tensor([1.0, 4.0], requires_grad=True)
    with Tape() as tape:
        y = tc.sqrt(x).sum()
    backward(tape, Tensor(1.0))
    np.testing.assert_allclose(x.grad, [0.5, 0.25])


def test_broadcasting_trailing_and_scalar():
    a = Tensor(np.ones((2, 3)), requires_grad=True)
    row = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    with Tape() as tape:
        y = ((a + row) * 2.0).sum()
    grads = backward(tape, Tensor(1.0))
    np.testing.assert_array_equal(grads[a.uid].data, np.full((2, 3), 2.0))
    np.testing.assert_array_equal(grads[row.uid].data, np.full(3, 4.0))


def test_double_sided_broadcast_rejected():
    a = Tensor(np.ones((3, 1)))
    b = Tensor(np.ones((1, 4)))
    with pytest.raises(ValueError):
        a + b


def test_shape_invariant_product():
    t = Tensor(np.zeros((2, 3, 4)))
    assert t.size == 24 == int(np.prod(t.shape))


def test_getitem_and_concat_gradients():
    x = Tensor(np.arange(6.0).reshape(2, 3))
    err = check_gradients(lambda t: tc.concat([t[0:1] * 2.0, t[1:2]], axis=0).sum(), x)
    assert err < 1e-8


def test_matmul_shape_errors():
    a = Tensor(np.ones((2, 3)))
    b = Tensor(np.ones((4, 2)))
    with pytest.raises(ValueError):
        a @ b


def test_serialization_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    arr = rng.normal(size=(3, 4, 5))
    path = tmp_path / "t.tct"
    save_tensor(Tensor(arr), str(path))
    again = load_tensor(str(path))
    assert again.data.dtype == np.float64
    assert again.shape == (3, 4, 5)
    assert again.data.tobytes() == arr.tobytes()


def test_serialization_header_layout():
    buf = io.BytesIO()
    save_tensor(Tensor(np.zeros((2, 3), dtype=np.float32)), buf)
    raw = buf.getvalue()
    assert raw[:4] == b"TCT1"
    assert int.from_bytes(raw[4:8], "little") == 2  # rank
    assert int.from_bytes(raw[8:12], "little") == 2
    assert int.from_bytes(raw[12:16], "little") == 3
    assert raw[16] == 1  # float32 code
    assert len(raw) == 17 + 6 * 4


def test_serialization_scalar_and_float32():
    buf = io.BytesIO()
    save_tensor(Tensor(np.float32(2.5)), buf)
    buf.seek(0)
    t = load_tensor(buf)
    assert t.shape == ()
    assert t.item() == 2.5
    assert t.data.dtype == np.float32


def test_serialization_bad_magic():
    with pytest.raises(ValueError, match="magic"):
        load_tensor(io.BytesIO(b"XXXX" + b"\x00" * 16))


def test_float32_optin_dtype():
    t = Tensor([1.0, 2.0], dtype=np.float32)
    assert t.data.dtype == np.float32
    assert (t * 2.0).data.dtype == np.float32
