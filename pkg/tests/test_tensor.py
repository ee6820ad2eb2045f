import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mcwnet import tensor as T
from mcwnet.gradcheck import check_block, finite_difference_check, relative_error
from mcwnet.tensor import KinkPattern, ShapeError, Tensor, no_grad


def conv_loops(x, w, b=None):
    """Direct nested-loop zero-padded 'same' convolution."""
    B, cin, H, W = x.shape
    cout, _, k, _ = w.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.zeros((B, cout, H, W))
    for n in range(B):
        for o in range(cout):
            for i in range(H):
                for j in range(W):
                    out[n, o, i, j] = np.sum(xp[n, :, i:i + k, j:j + k] * w[o])
            if b is not None:
                out[n, o] += b[o]
    return out


@pytest.mark.parametrize("k", [1, 3])
def test_conv2d_matches_loops(rng, k):
    x = rng.standard_normal((2, 3, 5, 6))
    w = rng.standard_normal((4, 3, k, k))
    b = rng.standard_normal(4)
    out = T.conv2d(Tensor(x), Tensor(w), Tensor(b)).data
    np.testing.assert_allclose(out, conv_loops(x, w, b), atol=1e-12)


def test_conv2d_backward_is_adjoint(rng):
    # <conv(x), g> == <x, conv^T(g)>: the input gradient is the exact adjoint
    x = Tensor(rng.standard_normal((1, 3, 4, 4)), requires_grad=True)
    w = Tensor(rng.standard_normal((2, 3, 3, 3)))
    g = rng.standard_normal((1, 2, 4, 4))
    y = T.conv2d(x, w)
    y.backward(g)
    assert np.isclose(np.sum(y.data * g), np.sum(x.data * x.grad))


def test_conv2d_rejects_mismatched_channels(rng):
    with pytest.raises(ShapeError):
        T.conv2d(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((2, 4, 3, 3))))


def test_matmul_gradients_closed_form(rng):
    a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    b = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
    g = rng.standard_normal((3, 2))
    (a @ b).backward(g)
    np.testing.assert_allclose(a.grad, g @ b.data.T)
    np.testing.assert_allclose(b.grad, a.data.T @ g)


def test_softmax_rows_sum_to_one(rng):
    s = T.softmax_rows(Tensor(rng.standard_normal((5, 7)) * 50)).data
    np.testing.assert_allclose(s.sum(-1), 1.0, atol=1e-12)
    assert np.all(s >= 0)


def test_sigmoid_is_stable_for_large_inputs():
    s = T.sigmoid(Tensor(np.array([-1000.0, 0.0, 1000.0]))).data
    np.testing.assert_allclose(s, [0.0, 0.5, 1.0])


def test_sqrt_subgradient_zero_at_origin():
    x = Tensor(np.zeros(3), requires_grad=True)
    T.sqrt(x).sum().backward()
    np.testing.assert_array_equal(x.grad, 0.0)


def test_gradient_accumulates_over_reuse():
    x = Tensor(np.array([2.0]), requires_grad=True)
    (x * x + x).sum().backward()
    np.testing.assert_allclose(x.grad, [5.0])


def test_backward_without_graph_raises():
    with pytest.raises(RuntimeError):
        Tensor(np.ones(3)).backward()


def test_backward_rejects_bad_seed_shape():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError):
        (x * 2.0).backward(np.ones(4))


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = x * 3.0
    assert not y.requires_grad
    with pytest.raises(RuntimeError):
        y.backward()


def test_kink_replay_keeps_recorded_branch():
    x = Tensor(np.array([0.5, -0.5]))
    pat = KinkPattern()
    with pat.record():
        T.relu(x)
    x.data[:] = [-0.1, 0.1]
    with pat.replay():
        y = T.relu(x).data
    np.testing.assert_allclose(y, [-0.1, 0.0])


@given(arrays(np.float64, (3, 4), elements=st.floats(-5, 5)),
       arrays(np.float64, (4,), elements=st.floats(-5, 5)))
def test_broadcast_gradients_sum_over_expanded_axes(a, b):
    ta, tb = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)
    (ta * tb + tb).sum().backward()
    np.testing.assert_allclose(ta.grad, np.broadcast_to(b, a.shape))
    np.testing.assert_allclose(tb.grad, a.sum(0) + 3.0)


@given(arrays(np.float64, (2, 3), elements=st.floats(-10, 10)))
def test_relative_error_is_symmetric_and_bounded(a):
    b = a + 1.0
    e1, e2 = relative_error(a, b), relative_error(b, a)
    np.testing.assert_array_equal(e1, e2)
    assert np.all((e1 >= 0) & (e1 <= 2))


def test_fd_check_detects_a_wrong_gradient():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)

    def bad():
        y = T.square(x)
        # correct forward, sabotaged backward
        return Tensor._make(y.data, (x,), lambda g: (g * x.data,))

    assert not finite_difference_check(bad, [x]).passed


@pytest.mark.parametrize("block", ["tensor", "conv", "prelu"])
def test_primitive_gradients(block):
    r = check_block(block, seed=3)
    assert r.passed, str(r)
