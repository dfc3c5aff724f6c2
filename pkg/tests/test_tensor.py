import numpy as np
import pytest
from hypothesis import given, strategies as st

from scatterkit.tensor import (GraphError, Tensor, add, concat, conv2d, cross_entropy, dense, gap,
                               log_softmax, maxpool2d, mul, no_grad, relu, reshape, sap, sigmoid,
                               softmax, split, stack, take, tsum)
from scatterkit.tensor.gradcheck import REGISTRY, check, relative_error, run_all


def direct_conv(x, w, b, groups, stride, pad):
    """Nested-loop grouped cross-correlation."""
    n, c, h, wd = x.shape
    co, cpg, kh, kw = w.shape
    opg = co // groups
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho, wo = (h + 2 * pad - kh) // stride + 1, (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, co, ho, wo))
    for o in range(co):
        g = o // opg
        for i in range(ho):
            for j in range(wo):
                patch = xp[:, g * cpg:(g + 1) * cpg, i * stride:i * stride + kh, j * stride:j * stride + kw]
                out[:, o, i, j] = (patch * w[o]).sum(axis=(1, 2, 3))
    return out + (0 if b is None else b[None, :, None, None])


@given(st.integers(1, 2), st.sampled_from([1, 2, 4]), st.integers(1, 2), st.integers(3, 7),
       st.sampled_from([1, 3]), st.integers(1, 2), st.integers(0, 1), st.integers(0, 1000))
def test_conv2d_matches_loops(n, groups, cpg, h, k, stride, pad, seed):
    rng = np.random.default_rng(seed)
    c = groups * cpg
    co = groups * 2
    x = rng.normal(size=(n, c, h, h))
    w = rng.normal(size=(co, cpg, k, k))
    b = rng.normal(size=co)
    got = conv2d(Tensor(x), Tensor(w), Tensor(b), groups=groups, stride=stride, pad=pad).data
    np.testing.assert_allclose(got, direct_conv(x, w, b, groups, stride, pad), rtol=1e-10, atol=1e-12)


def test_grouped_conv_equals_block_diagonal():
    rng = np.random.default_rng(0)
    g, cpg, opg = 4, 2, 3
    x = rng.normal(size=(2, g * cpg, 6, 6))
    w = rng.normal(size=(g * opg, cpg, 3, 3))
    full = np.zeros((g * opg, g * cpg, 3, 3))
    for i in range(g):
        full[i * opg:(i + 1) * opg, i * cpg:(i + 1) * cpg] = w[i * opg:(i + 1) * opg]
    a = conv2d(Tensor(x), Tensor(w), groups=g, pad=1).data
    b = conv2d(Tensor(x), Tensor(full), groups=1, pad=1).data
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


def test_conv2d_validation():
    x = Tensor(np.zeros((1, 4, 5, 5)))
    with pytest.raises(ValueError):
        conv2d(x, Tensor(np.zeros((4, 3, 3, 3))), groups=2)
    with pytest.raises(ValueError):
        conv2d(x, Tensor(np.zeros((4, 4, 7, 7))))
    with pytest.raises(ValueError):
        conv2d(x, Tensor(np.zeros((4, 4, 3, 3))), Tensor(np.zeros(3)))


def test_maxpool_and_pools():
    x = np.arange(16.0).reshape(1, 1, 4, 4)
    assert maxpool2d(Tensor(x)).data.tolist() == [[[[5.0, 7.0], [13.0, 15.0]]]]
    assert gap(Tensor(x)).data[0, 0] == pytest.approx(7.5)
    assert sap(Tensor(x), 10.0).data[0, 0] == pytest.approx(12.5)
    with pytest.raises(ValueError):
        maxpool2d(Tensor(np.zeros((1, 1, 1, 1))))


@given(st.integers(1, 4), st.integers(1, 6), st.floats(-50, 50))
def test_softmax_rows(n, c, shift):
    x = np.random.default_rng(n * 7 + c).normal(size=(n, c)) + shift
    p = softmax(Tensor(x), axis=1).data
    np.testing.assert_allclose(p.sum(axis=1), 1.0, rtol=1e-12)
    np.testing.assert_allclose(np.exp(log_softmax(Tensor(x), axis=1).data), p, rtol=1e-12)


def test_softmax_extreme_is_finite():
    p = softmax(Tensor(np.array([[1000.0, -1000.0, 0.0]])), axis=1).data
    assert np.all(np.isfinite(p)) and p[0, 0] == pytest.approx(1.0)


def test_cross_entropy_oracle():
    logits = np.array([[2.0, 0.5, -1.0], [0.0, 0.0, 0.0]])
    labels = [0, 2]
    want = -np.mean([np.log(np.exp(2) / np.exp([2, 0.5, -1]).sum()), np.log(1 / 3)])
    assert cross_entropy(Tensor(logits), labels).data == pytest.approx(want, rel=1e-12)


def test_broadcast_gradients():
    a = Tensor(np.ones((2, 3, 4)), requires_grad=True)
    b = Tensor(np.full((3, 1), 2.0), requires_grad=True)
    tsum(mul(a, b)).backward()
    assert a.grad.shape == (2, 3, 4) and np.all(a.grad == 2.0)
    assert b.grad.shape == (3, 1) and np.all(b.grad == 8.0)


def test_gradient_accumulates_across_backward():
    w = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    for _ in range(2):
        tsum(mul(w, w)).backward()
    np.testing.assert_allclose(w.grad, [4.0, 8.0])
    w.zero_grad()
    assert w.grad is None


def test_shared_subexpression():
    x = Tensor(np.array([3.0]), requires_grad=True)
    y = mul(x, x)
    tsum(add(y, y)).backward()
    assert x.grad[0] == pytest.approx(12.0)


def test_graph_errors_and_no_grad():
    with pytest.raises(GraphError):
        Tensor(np.ones(2), requires_grad=True).backward()
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(GraphError):
        mul(x, 2.0).backward()
    with no_grad():
        y = mul(x, 2.0)
    assert not y.requires_grad
    with pytest.raises(GraphError):
        tsum(y).backward()


def test_structural_ops_roundtrip():
    x = np.random.default_rng(0).normal(size=(2, 6, 3, 3))
    parts = split(Tensor(x), 3, axis=1)
    assert [p.shape for p in parts] == [(2, 2, 3, 3)] * 3
    np.testing.assert_array_equal(concat(parts, axis=1).data, x)
    np.testing.assert_array_equal(take(Tensor(x), 2, 4, axis=1).data, x[:, 2:4])
    st_ = stack([Tensor(x[:, 0]), Tensor(x[:, 1])], axis=1)
    np.testing.assert_array_equal(st_.data, x[:, :2])
    assert reshape(Tensor(x), (2, -1)).shape == (2, 54)
    with pytest.raises(ValueError):
        split(Tensor(x), 4, axis=1)


def test_dense_and_activations():
    x = np.array([[1.0, -2.0]])
    w = np.array([[1.0, 0.5], [0.0, -1.0]])
    np.testing.assert_allclose(dense(Tensor(x), Tensor(w), Tensor(np.array([0.1, 0.2]))).data, [[0.1, 2.2]])
    assert relu(Tensor(x)).data.tolist() == [[1.0, 0.0]]
    assert sigmoid(Tensor(np.array([0.0]))).data[0] == 0.5
    with pytest.raises(ValueError):
        dense(Tensor(x), Tensor(np.ones((2, 3))))


def test_dtype_preserved():
    x = Tensor(np.ones((1, 2, 4, 4), dtype=np.float32))
    w = Tensor(np.ones((2, 1, 3, 3), dtype=np.float32))
    assert conv2d(x, w, groups=2, pad=1).dtype == np.float32
    assert mul(x, 2.0).dtype == np.float32


def test_gradcheck_detects_wrong_gradient():
    from scatterkit.tensor.core import Tensor as T

    def bad(x):
        out = np.sin(x.data)
        return T._from_op(out, (x,), lambda g: (g,), "bad")     # derivative should be cos
    err = check(bad, [np.random.default_rng(0).normal(size=5)], np.random.default_rng(1))
    assert err > 1e-2


def test_relative_error_conventions():
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
    assert relative_error(np.ones(3), np.ones(3)) == 0.0


def test_registry_covers_ops():
    import scatterkit.piha  # noqa: F401  registers the composed block
    for name in ("add", "mul", "relu", "sigmoid", "softmax", "dense", "conv2d", "gap", "sap",
                 "maxpool2d", "concat", "split", "cross_entropy", "piha"):
        assert name in REGISTRY
    rep = run_all("double", instances=1, seed=3, names=["piha"])
    assert "piha" in rep.results and rep.passed


def test_gradcheck_single_precision_path():
    rep = run_all("single", instances=1, seed=1, names=["dense", "conv2d"])
    assert rep.tolerance == 1e-4 and rep.passed
