from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from momo.autodiff import (
    Adam,
    AdamState,
    Tensor,
    adam_step,
    check_gradients,
    clip,
    concat,
    conv1d,
    conv_output_length,
    cosine_similarity,
    exp,
    leaky_relu,
    log,
    matmul,
    maxpool_time,
    pad_reflect,
    project_joints,
    relu,
    sigmoid,
    tabs,
    transpose,
    upsample_nearest,
)
from momo.checkpoint import CheckpointError, load_arrays, save_arrays


def param(rng, *shape, scale=1.0):
    return Tensor(rng.normal(scale=scale, size=shape), requires_grad=True)


def naive_conv1d(x, w, b, stride, padding):
    C, T = x.shape
    O, _, k = w.shape
    xp = np.zeros((C, T + 2 * padding))
    xp[:, padding : padding + T] = x
    T_out = (T + 2 * padding - k) // stride + 1
    out = np.zeros((O, T_out))
    for o in range(O):
        for t in range(T_out):
            acc = b[o]
            for c in range(C):
                for j in range(k):
                    acc += w[o, c, j] * xp[c, t * stride + j]
            out[o, t] = acc
    return out


# --------------------------------------------------------------- conv1d
def test_conv_identity_kernel():
    x = Tensor(np.arange(7.0)[None])
    out = conv1d(x, Tensor(np.ones((1, 1, 1))))
    np.testing.assert_array_equal(out.data, x.data)


def test_three_stride_two_layers_downsample_by_eight():
    T = 64
    for _ in range(3):
        T = conv_output_length(T + 6, 8, stride=2)
    assert T == 8


@pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1), (2, 0)])
def test_conv_matches_naive_loops(stride, padding):
    rng = np.random.default_rng(3)
    x, w, b = rng.normal(size=(2, 6)), rng.normal(size=(3, 2, 3)), rng.normal(size=3)
    out = conv1d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=padding)
    np.testing.assert_allclose(out.data, naive_conv1d(x, w, b, stride, padding), atol=1e-12, rtol=0)


def test_conv_batched_equals_unbatched():
    rng = np.random.default_rng(4)
    x, w = rng.normal(size=(3, 2, 10)), Tensor(rng.normal(size=(4, 2, 3)))
    batched = conv1d(Tensor(x), w, stride=2).data
    for i in range(3):
        np.testing.assert_allclose(batched[i], conv1d(Tensor(x[i]), w, stride=2).data, atol=1e-13)


def test_conv_linearity():
    rng = np.random.default_rng(5)
    w = Tensor(rng.normal(size=(3, 2, 4)))
    x, y = rng.normal(size=(2, 2, 12)), rng.normal(size=(2, 2, 12))
    a, b = 1.7, -0.3
    lhs = conv1d(Tensor(a * x + b * y), w, stride=2).data
    rhs = a * conv1d(Tensor(x), w, stride=2).data + b * conv1d(Tensor(y), w, stride=2).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_conv_rejects_bad_shapes():
    with pytest.raises(ValueError, match="channel mismatch"):
        conv1d(Tensor(np.zeros((2, 5))), Tensor(np.zeros((1, 3, 2))))
    with pytest.raises(ValueError, match="output length"):
        conv1d(Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 1, 5))))
    with pytest.raises(ValueError, match="bias"):
        conv1d(Tensor(np.zeros((1, 5))), Tensor(np.zeros((2, 1, 1))), Tensor(np.zeros(3)))


@pytest.mark.parametrize("stride,padding", [(1, 0), (2, 1), (2, 3)])
def test_conv_gradients(stride, padding):
    rng = np.random.default_rng(6)
    x, w, b = param(rng, 2, 3, 11), param(rng, 4, 3, 3), param(rng, 4)
    probe = rng.normal(size=(2, 4, conv_output_length(11, 3, stride, padding)))
    err = check_gradients(lambda: (conv1d(x, w, b, stride, padding) * probe).sum(), [x, w, b])
    assert err < 1e-6


# ------------------------------------------------- elementwise primitives
def test_leaky_relu_value():
    assert leaky_relu(Tensor(np.array(-2.0)), 0.2).item() == pytest.approx(-0.4, abs=1e-15)
    assert leaky_relu(Tensor(np.array(3.0)), 0.2).item() == 3.0


def test_maxpool_constant_and_first_argmax():
    x = Tensor(np.full((2, 3, 5), 1.5), requires_grad=True)
    out = maxpool_time(x)
    np.testing.assert_array_equal(out.data, np.full((2, 3), 1.5))
    out.sum().backward()
    expected = np.zeros((2, 3, 5))
    expected[..., 0] = 1.0
    np.testing.assert_array_equal(x.grad, expected)


def test_cosine_self_is_one_and_zero_vector_is_zero():
    rng = np.random.default_rng(7)
    a = rng.normal(size=(4, 6))
    np.testing.assert_allclose(cosine_similarity(Tensor(a), Tensor(a)).data, 1.0, atol=1e-14)
    z = Tensor(np.zeros((1, 3)), requires_grad=True)
    c = cosine_similarity(z, Tensor(np.ones((1, 3))))
    assert c.data[0] == 0.0
    c.sum().backward()
    np.testing.assert_array_equal(z.grad, 0.0)


UNARY = {
    "exp": lambda t: exp(t),
    "log": lambda t: log(tabs(t) + 0.5),
    "sigmoid": sigmoid,
    "relu": relu,
    "leaky_relu": lambda t: leaky_relu(t, 0.2),
    "abs": tabs,
    "clip": lambda t: clip(t, -0.5, 0.5),
    "transpose": lambda t: transpose(t, (1, 0)),
    "maxpool_time": maxpool_time,
    "pad_reflect": lambda t: pad_reflect(t, 2),
    "upsample_nearest": upsample_nearest,
    "mean_axis": lambda t: t.mean(axis=1),
    "getitem_fancy": lambda t: t[np.array([0, 2, 2]), 1:4],
    "reshape": lambda t: t.reshape(2, 3, 3),
    "div": lambda t: t / (tabs(t) + 1.0),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_primitive_gradients(name):
    rng = np.random.default_rng(8)
    data = rng.normal(size=(3, 6))
    # keep away from kinks so central differences are valid
    data = np.where(np.abs(data) < 0.05, 0.3, data)
    data = np.where(np.abs(np.abs(data) - 0.5) < 0.05, 0.8, data)
    x = Tensor(data, requires_grad=True)
    out_shape = UNARY[name](x).shape
    probe = rng.normal(size=out_shape)
    assert check_gradients(lambda: (UNARY[name](x) * probe).sum(), [x]) < 1e-6


def test_binary_primitive_gradients():
    rng = np.random.default_rng(9)
    a, b = param(rng, 3, 4), param(rng, 4, 2)
    c = param(rng, 3, 4)
    checks = {
        "matmul": lambda: (matmul(a, b) * np.arange(6.0).reshape(3, 2)).sum(),
        "mul_broadcast": lambda: (a * c[0:1]).sum(),
        "sub": lambda: ((a - c) * (a - c)).sum(),
        "concat": lambda: (concat([a, c], axis=1) * np.arange(24.0).reshape(3, 8)).sum(),
        "cosine": lambda: cosine_similarity(a, c).sum(),
    }
    for name, fn in checks.items():
        assert check_gradients(fn, [a, b, c]) < 1e-6, name


def test_project_joints_gradient_and_value():
    rng = np.random.default_rng(10)
    X = param(rng, 2, 9, 5)
    R = rng.normal(size=(2, 2, 3))
    out = project_joints(X, R)
    Xj = X.data.reshape(2, 3, 3, 5)
    np.testing.assert_allclose(out.data[1, 2:4], R[1] @ Xj[1, 1], atol=1e-13)
    probe = rng.normal(size=out.shape)
    assert check_gradients(lambda: (project_joints(X, R) * probe).sum(), [X]) < 1e-6


# -------------------------------------------------------------- backward
def test_linear_loss_gradient_is_input():
    x = np.array([1.0, -2.0, 3.5])
    w = Tensor(np.zeros(3), requires_grad=True)
    (w * x).sum().backward()
    np.testing.assert_array_equal(w.grad, x)


def test_gradients_accumulate_and_disconnected_is_zero():
    w = Tensor(np.ones(2), requires_grad=True)
    unused = Tensor(np.ones(2), requires_grad=True)
    for _ in range(3):
        (w * 2.0).sum().backward()
    np.testing.assert_array_equal(w.grad, 6.0)
    assert unused.grad is None or np.all(unused.grad == 0)


def test_backward_rejects_non_scalar():
    w = Tensor(np.ones(2), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        (w * 2.0).backward()


def test_backward_is_deterministic():
    rng = np.random.default_rng(11)
    x, w = param(rng, 2, 3, 16), param(rng, 4, 3, 4)

    def grads():
        w.grad = None
        leaky_relu(conv1d(x, w, stride=2), 0.2).mean().backward()
        return w.grad.copy()

    np.testing.assert_array_equal(grads(), grads())


_OPS = [
    lambda t: t * 1.3, lambda t: sigmoid(t), lambda t: leaky_relu(t, 0.2),
    lambda t: t + t * t, lambda t: exp(t * 0.3), lambda t: tabs(t) + 0.1,
]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, len(_OPS) - 1), min_size=1, max_size=6), st.integers(0, 2**31 - 1))
def test_random_graphs_match_finite_differences(ops, seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.uniform(0.2, 1.0, size=(3, 4)) * rng.choice([-1, 1], size=(3, 4)), requires_grad=True)
    w = Tensor(rng.normal(size=(4, 2)), requires_grad=True)

    def fn():
        h = x
        for i in ops:
            h = _OPS[i](h)
        return matmul(h, w).mean() + cosine_similarity(h, x).sum()

    assert check_gradients(fn, [x, w]) < 1e-4


# ------------------------------------------------------------------ Adam
def test_adam_zero_gradient_leaves_params():
    p = {"w": np.array([1.0, -2.0])}
    state = AdamState()
    adam_step(p, {"w": np.zeros(2)}, state)
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])


def test_adam_constant_gradient_step_tends_to_lr_sign():
    p = {"w": np.array([0.0, 0.0])}
    state = AdamState(lr=1e-3)
    for _ in range(200):
        before = p["w"].copy()
        adam_step(p, {"w": np.array([3.0, -0.01])}, state)
    np.testing.assert_allclose(p["w"] - before, [-1e-3, 1e-3], rtol=1e-5)


def test_adam_matches_reference_formula():
    rng = np.random.default_rng(12)
    w0 = rng.normal(size=4)
    grads = rng.normal(size=(5, 4))
    p = {"w": w0.copy()}
    state = AdamState()
    for g in grads:
        adam_step(p, {"w": g}, state)
    m = v = np.zeros(4)
    w = w0.copy()
    for t, g in enumerate(grads, 1):
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w = w - 2e-4 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    np.testing.assert_allclose(p["w"], w, rtol=0, atol=1e-15)


def test_adam_minimises_quadratic():
    w = Tensor(np.array([3.0]), requires_grad=True)
    opt = Adam({"w": w}, lr=0.05)
    for _ in range(2000):
        opt.zero_grad()
        loss = ((w - 1.25) * (w - 1.25)).sum()
        loss.backward()
        opt.step()
    assert ((w.data[0] - 1.25) ** 2) < 1e-6


def test_adam_nan_gradient_aborts_without_update():
    w = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    opt = Adam({"w": w})
    w.grad = np.array([np.nan, 1.0])
    with pytest.raises(FloatingPointError, match="w"):
        opt.step()
    np.testing.assert_array_equal(w.data, [1.0, 2.0])
    assert opt.state.step == 0


# ------------------------------------------------------------ checkpoints
def test_checkpoint_round_trip_is_bitwise(tmp_path):
    rng = np.random.default_rng(13)
    arrays = {"a": rng.normal(size=(3, 4)), "b.c": rng.normal(size=5), "s": np.array(2.5)}
    save_arrays(tmp_path / "x.ckpt", arrays, {"note": "hi"})
    back, meta = load_arrays(tmp_path / "x.ckpt")
    assert meta == {"note": "hi"}
    for k in arrays:
        assert back[k].tobytes() == np.asarray(arrays[k]).tobytes()
    save_arrays(tmp_path / "y.ckpt", dict(reversed(list(arrays.items()))), {"note": "hi"})
    assert (tmp_path / "x.ckpt").read_bytes() == (tmp_path / "y.ckpt").read_bytes()


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "bad").write_bytes(b"not a checkpoint at all")
    with pytest.raises(CheckpointError):
        load_arrays(tmp_path / "bad")
