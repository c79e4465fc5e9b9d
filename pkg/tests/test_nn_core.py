import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lanecast.errors import BadLabel, BatchTooSmall, GraphNotScalar, ShapeMismatch
from lanecast.nn import (
    Adam,
    AdamState,
    BatchNormState,
    Tensor,
    adam_step,
    backward,
    batch_norm_time,
    concat,
    conv_time,
    cross_entropy,
    dropout,
    grad_check,
    layer_norm,
    load_checkpoint,
    matmul,
    max_pool_time,
    relu,
    reshape,
    save_checkpoint,
    sigmoid,
    softmax,
    tanh,
    transpose,
)


def leaf(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def rand(*shape, seed=0):
    return leaf(np.random.default_rng(seed).normal(size=shape))


def sum_with_weights(t, seed=99):
    """Scalar loss that weights every output entry differently."""
    w = np.random.default_rng(seed).normal(size=t.shape)
    return (t * w).sum()


# -- products and elementwise ----------------------------------------------------

def test_matmul_identity_and_values():
    b = np.array([[5.0, 6.0], [7.0, 8.0]])
    np.testing.assert_array_equal(matmul(Tensor(np.eye(2)), Tensor(b)).data, b)
    got = matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor(b)).data
    np.testing.assert_array_equal(got, [[19, 22], [43, 50]])


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


@pytest.mark.parametrize("sa,sb", [((3, 4), (4, 2)), ((2, 3, 4), (4, 5)), ((2, 3, 4), (2, 4, 5)), ((4,), (4, 3))])
def test_matmul_grad(sa, sb):
    a, b = rand(*sa, seed=1), rand(*sb, seed=2)
    assert grad_check(lambda: sum_with_weights(matmul(a, b)), [a, b], n_coords=20) < 1e-6


def test_activations_values():
    z = Tensor(np.array([0.0]))
    assert sigmoid(z).data[0] == 0.5
    assert tanh(z).data[0] == 0.0
    assert relu(Tensor(np.array([-1.0]))).data[0] == 0.0
    assert abs(sigmoid(Tensor(np.array([50.0]))).data[0] - 1.0) < 1e-9
    with np.errstate(over="raise"):
        assert sigmoid(Tensor(np.array([-1e6]))).data[0] == 0.0


@pytest.mark.parametrize("fn", [sigmoid, tanh, relu])
def test_activation_grads(fn):
    x = rand(3, 4, seed=3)
    assert grad_check(lambda: sum_with_weights(fn(x)), [x]) < 1e-6


def test_backward_simple():
    x = leaf([1.0, 2.0])
    backward(x.sum())
    np.testing.assert_array_equal(x.grad, [1, 1])
    backward((x * x).sum())
    np.testing.assert_array_equal(x.grad, [2, 4])


def test_backward_needs_scalar():
    with pytest.raises(GraphNotScalar):
        backward(leaf([1.0, 2.0]) * 2)


def test_backward_deterministic():
    x = rand(5, 6)
    w = rand(6, 3, seed=4)

    def loss():
        return sum_with_weights(tanh(matmul(x, w)))

    backward(loss())
    g1 = w.grad.copy()
    backward(loss())
    assert np.array_equal(g1, w.grad)


def test_shared_subexpression_grad():
    x = leaf([0.3, -0.7])
    y = tanh(x)
    backward((y * y + y).sum())
    t = np.tanh([0.3, -0.7])
    np.testing.assert_allclose(x.grad, (2 * t + 1) * (1 - t * t))


def test_deep_chain_no_recursion_limit():
    x = leaf([1.0])
    y = x
    for _ in range(5000):
        y = y * 1.0
    backward(y.sum())
    assert x.grad[0] == 1.0


def test_shape_ops_grads():
    x = rand(2, 3, 4)
    assert grad_check(lambda: sum_with_weights(transpose(x, (2, 0, 1))), [x]) < 1e-8
    assert grad_check(lambda: sum_with_weights(reshape(x, (6, 4))), [x]) < 1e-8
    assert grad_check(lambda: sum_with_weights(x[:, 1:, ::2]), [x]) < 1e-8
    assert grad_check(lambda: sum_with_weights(x[:, [0, 0, 2]]), [x]) < 1e-8
    y = rand(2, 1, 4, seed=5)
    assert grad_check(lambda: sum_with_weights(concat([x, y], axis=1)), [x, y]) < 1e-8
    assert grad_check(lambda: sum_with_weights(x.mean(axis=1)), [x]) < 1e-8


def test_broadcast_grad():
    x, b = rand(4, 3), rand(3, seed=1)
    assert grad_check(lambda: sum_with_weights((x + b) * b / (b * b + 1.0)), [x, b]) < 1e-7


# -- softmax and loss ------------------------------------------------------------

def test_softmax_values():
    np.testing.assert_allclose(softmax(Tensor(np.zeros((1, 3)))).data, [[1 / 3] * 3])
    big = softmax(Tensor(np.array([[1000.0, 0.0, 0.0]]))).data
    assert np.all(np.isfinite(big))
    np.testing.assert_allclose(big, [[1, 0, 0]], atol=1e-12)


@given(arrays(np.float64, (4, 5), elements=st.floats(-50, 50)), st.floats(-100, 100))
@settings(max_examples=50)
def test_softmax_shift_invariant(x, c):
    a = softmax(Tensor(x)).data
    np.testing.assert_allclose(a, softmax(Tensor(x + c)).data, atol=1e-12)
    np.testing.assert_allclose(a.sum(axis=-1), 1.0, atol=1e-12)


def test_softmax_grad():
    x = rand(3, 4)
    assert grad_check(lambda: sum_with_weights(softmax(x)), [x]) < 1e-6


def test_cross_entropy_values():
    for label in range(3):
        loss = cross_entropy(Tensor(np.zeros((1, 3))), np.array([label]))
        assert float(loss.data) == pytest.approx(math.log(3), abs=1e-12)
    assert float(cross_entropy(Tensor([[50.0, 0, 0]]), np.array([0])).data) < 1e-9


def test_cross_entropy_grad_formula():
    logits = rand(5, 3)
    labels = np.array([0, 2, 1, 1, 0])
    backward(cross_entropy(logits, labels))
    p = softmax(Tensor(logits.data)).data
    expect = (p - np.eye(3)[labels]) / 5
    np.testing.assert_allclose(logits.grad, expect, atol=1e-12)
    assert grad_check(lambda: cross_entropy(logits, labels), [logits]) < 1e-6


def test_cross_entropy_bad_label():
    with pytest.raises(BadLabel):
        cross_entropy(Tensor(np.zeros((2, 3))), np.array([0, 3]))
    with pytest.raises(BadLabel):
        cross_entropy(Tensor(np.zeros((2, 3))), np.array([0.0, 1.0]))


# -- normalisation -----------------------------------------------------------------

def test_layer_norm_rows():
    g, b = leaf(np.ones(4)), leaf(np.zeros(4))
    np.testing.assert_array_equal(layer_norm(Tensor(np.full((2, 4), 7.0)), g, b).data, 0.0)
    x = Tensor(np.random.default_rng(0).normal(3, 20, size=(5, 4)))
    out = layer_norm(x, g, b).data
    np.testing.assert_allclose(out.mean(axis=-1), 0, atol=1e-12)
    np.testing.assert_allclose(out.var(axis=-1), 1, atol=1e-6)


def test_layer_norm_grad():
    x, g, b = rand(2, 3, 6), rand(6, seed=1), rand(6, seed=2)
    assert grad_check(lambda: sum_with_weights(layer_norm(x, g, b)), [x, g, b]) < 1e-5


def test_batch_norm_train_stats_and_eval_match():
    x = Tensor(np.random.default_rng(0).normal(2, 3, size=(4, 3, 5, 2)))
    g, b = leaf(np.ones(3)), leaf(np.zeros(3))
    st_ = BatchNormState(3)
    out = batch_norm_time(x, g, b, st_, train=True).data
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0, atol=1e-6)
    np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1, atol=1e-5)
    frozen = BatchNormState(3)
    frozen.running_mean = x.data.mean(axis=(0, 2, 3))
    frozen.running_var = x.data.var(axis=(0, 2, 3))
    np.testing.assert_allclose(batch_norm_time(x, g, b, frozen, train=False).data, out, atol=1e-12)


def test_batch_norm_running_update():
    x = Tensor(np.random.default_rng(0).normal(2, 3, size=(4, 1, 5, 2)))
    st_ = BatchNormState(1)
    batch_norm_time(x, leaf([1.0]), leaf([0.0]), st_, train=True)
    assert st_.running_mean[0] == pytest.approx(0.1 * x.data.mean())
    assert st_.running_var[0] == pytest.approx(0.9 + 0.1 * x.data.var())


def test_batch_norm_grad_and_small_batch():
    x, g, b = rand(3, 2, 4, 3), rand(2, seed=1), rand(2, seed=2)
    f = lambda: sum_with_weights(batch_norm_time(x, g, b, BatchNormState(2), train=True))
    assert grad_check(f, [x, g, b]) < 1e-4
    with pytest.raises(BatchTooSmall):
        batch_norm_time(rand(1, 2, 4, 3), g, b, BatchNormState(2), train=True)


# -- conv / pool / dropout ---------------------------------------------------------

def test_conv_delta_kernel_identity():
    x = Tensor(np.random.default_rng(0).normal(size=(1, 7, 3)))
    k = Tensor(np.array([0.0, 1.0, 0.0]).reshape(1, 1, 3, 1))
    np.testing.assert_array_equal(conv_time(x, k).data, x.data)


def test_conv_ones_kernel():
    x = Tensor(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 4, 1))
    k = Tensor(np.ones((1, 1, 3, 1)))
    np.testing.assert_array_equal(conv_time(x, k).data.ravel(), [3, 6, 9, 7])


def test_conv_matches_loop_oracle():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 3, 6, 4))
    k = rng.normal(size=(5, 3, 5, 1))
    b = rng.normal(size=5)
    got = conv_time(Tensor(x), Tensor(k), Tensor(b)).data
    xp = np.pad(x, ((0, 0), (0, 0), (2, 2), (0, 0)))
    expect = np.zeros((2, 5, 6, 4))
    for n in range(2):
        for o in range(5):
            for t in range(6):
                expect[n, o, t] = b[o] + np.einsum("ck,ckw->w", k[o, :, :, 0], xp[n, :, t : t + 5])
    np.testing.assert_allclose(got, expect, atol=1e-12)


@pytest.mark.parametrize("k", [3, 4, 5])
def test_conv_grad(k):
    x, w, b = rand(2, 3, 7, 2), rand(4, 3, k, 1, seed=1), rand(4, seed=2)
    assert grad_check(lambda: sum_with_weights(conv_time(x, w, b)), [x, w, b], n_coords=30) < 1e-5


def test_conv_bad_kernel():
    with pytest.raises(ShapeMismatch):
        conv_time(rand(1, 4, 2), rand(1, 1, 3, 2))
    with pytest.raises(ShapeMismatch):
        conv_time(rand(2, 4, 2), rand(1, 1, 3, 1))


def test_max_pool():
    x = Tensor(np.array([1.0, 3.0, 2.0, 5.0]).reshape(1, 4, 1))
    np.testing.assert_array_equal(max_pool_time(x, 2).data.ravel(), [3, 5])
    assert max_pool_time(Tensor(np.zeros((2, 50, 3))), 2).shape == (2, 25, 3)
    assert max_pool_time(Tensor(np.zeros((2, 25, 3))), 2).shape == (2, 12, 3)


def test_max_pool_grad_routes_to_argmax():
    x = leaf(np.random.default_rng(0).permutation(24).astype(float).reshape(2, 6, 2))
    backward(sum_with_weights(max_pool_time(x, 3)))
    assert np.count_nonzero(x.grad) == 8
    assert grad_check(lambda: sum_with_weights(max_pool_time(x, 3)), [x], n_coords=24) < 1e-8


def test_dropout_modes():
    x = Tensor(np.ones((3, 4)))
    assert dropout(x, 0.0, True, None) is x
    assert dropout(x, 0.5, False, None) is x
    big = dropout(Tensor(np.ones(100_000)), 0.5, True, np.random.default_rng(0)).data
    assert abs(big.mean() - 1.0) < 0.01
    assert set(np.unique(big)) == {0.0, 2.0}
    with pytest.raises(ValueError):
        dropout(x, 1.0, True, np.random.default_rng(0))


# -- optimiser and checker -----------------------------------------------------------

def test_adam_zero_grad_is_identity():
    p = np.array([1.0, -2.0])
    adam_step([p], [np.zeros(2)], AdamState(lr=0.1))
    np.testing.assert_array_equal(p, [1.0, -2.0])


@given(st.floats(1e-3, 1e3) | st.floats(-1e3, -1e-3))
def test_adam_first_step_magnitude(g):
    p = np.array([0.5])
    adam_step([p], [np.array([g])], AdamState(lr=0.01))
    assert abs(0.5 - p[0]) == pytest.approx(0.01, rel=1e-4)
    assert np.sign(0.5 - p[0]) == np.sign(g)


def test_adam_decoupled_decay():
    p = np.array([2.0, -3.0])
    adam_step([p], [np.zeros(2)], AdamState(lr=0.0007, weight_decay=0.004))
    np.testing.assert_allclose(p, np.array([2.0, -3.0]) * (1 - 2.8e-6), rtol=1e-15)


def test_adam_lr_zero():
    t = rand(3)
    before = t.data.copy()
    opt = Adam([t], lr=0.0, weight_decay=0.1)
    backward((t * t).sum())
    opt.step()
    np.testing.assert_array_equal(t.data, before)


def test_adam_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        adam_step([np.zeros(2)], [np.zeros(3)], AdamState())


def test_grad_check_linear_and_corrupted():
    x = Tensor(np.random.default_rng(0).normal(size=(6, 3)))
    w = rand(2, 3, seed=1)

    def loss():
        return sum_with_weights(matmul(x, transpose(w)))

    assert grad_check(loss, [w]) < 1e-9
    backward(loss())
    bad = grad_check(loss, [w], grads=[2 * w.grad])
    assert bad == pytest.approx(1.0, abs=1e-6)


def test_finite_forward_on_large_inputs():
    x = Tensor(np.random.default_rng(0).uniform(-1e6, 1e6, size=(4, 6)))
    g, b = Tensor(np.ones(6)), Tensor(np.zeros(6))
    for out in (sigmoid(x), tanh(x), relu(x), softmax(x), layer_norm(x, g, b)):
        assert np.all(np.isfinite(out.data))
    assert np.isfinite(cross_entropy(x[:, :3], np.array([0, 1, 2, 0])).data)


def test_checkpoint_roundtrip(tmp_path):
    arrays = {"a": np.arange(6.0).reshape(2, 3), "b": np.array([0.5])}
    blob, manifest = save_checkpoint(tmp_path / "m.f32", arrays, {"seed": 4})
    assert blob.stat().st_size == 7 * 4
    back, meta = load_checkpoint(blob)
    assert meta["seed"] == 4 and meta["dtype"] == "<f4"
    for k in arrays:
        np.testing.assert_array_equal(back[k], arrays[k])
