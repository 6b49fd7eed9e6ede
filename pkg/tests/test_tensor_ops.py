"""Autodiff core: forward oracles, gradient checks, graph mechanics."""

import numpy as np
import pytest

from patchalign import tensor as T
from patchalign.tensor import Tensor

from helpers import check_grads, ref_adaptive_pool, ref_conv2d


def test_dtype_policy():
    # float32/float64 inputs keep their dtype, anything else becomes float32
    assert Tensor(np.zeros(2, dtype=np.float32)).data.dtype == np.float32
    assert Tensor(np.zeros(2, dtype=np.float64)).data.dtype == np.float64
    assert Tensor(np.zeros(2, dtype=np.int64)).data.dtype == np.float32
    assert Tensor([1.0], dtype=np.float32).data.dtype == np.float32
    assert not Tensor([1.0]).requires_grad
    with pytest.raises(ValueError):
        Tensor([np.inf])


def test_scalar_and_elementwise_arithmetic():
    x = Tensor(np.array([1.0, -2.0, 3.0]))
    y = Tensor(np.array([0.5, 0.5, 0.5]))
    out = (2.0 * x + y - 1.0) * x - (-y)
    expect = (2.0 * x.data + y.data - 1.0) * x.data + y.data
    np.testing.assert_allclose(out.data, expect, rtol=1e-6)


def test_shape_mismatch_rejected():
    a = Tensor(np.zeros((2, 3)))
    b = Tensor(np.zeros((3, 2)))
    with pytest.raises(ValueError):
        a + b
    with pytest.raises(ValueError):
        a * b


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        (x + 1.0).backward()


def test_arith_and_sum_grads():
    rng = np.random.default_rng(11)
    for _ in range(5):
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(3, 4))
        check_grads(lambda ts: ((ts[0] * ts[1] + 2.0 * ts[0] - ts[1]) * ts[0]).sum(), [a, b])


def test_log_grad_and_clamp():
    rng = np.random.default_rng(12)
    for _ in range(5):
        a = rng.uniform(0.2, 3.0, size=(4, 3))
        check_grads(lambda ts: ts[0].log().sum(), [a])
    # values at or below the clamp floor: forward pins to log(eps), grad is 0
    x = Tensor(np.array([0.0, 1e-13, 0.5]), requires_grad=True, dtype=np.float64)
    out = x.log()
    np.testing.assert_allclose(out.data[:2], np.log(1e-12))
    out.sum().backward()
    np.testing.assert_allclose(x.grad, [0.0, 0.0, 2.0])


def test_relu_leaky_sigmoid_grads():
    rng = np.random.default_rng(13)
    for _ in range(5):
        a = rng.normal(size=(3, 5))
        a += np.where(a >= 0, 0.2, -0.2)  # keep away from the kink
        check_grads(lambda ts: (T.relu(ts[0]) * ts[0]).sum(), [a])
        check_grads(lambda ts: (T.leaky_relu(ts[0], 0.2) * ts[0]).sum(), [a])
        check_grads(lambda ts: T.sigmoid(ts[0]).sum(), [a])


def test_kink_at_zero():
    x = Tensor(np.zeros(2), requires_grad=True, dtype=np.float64)
    T.relu(x).sum().backward()
    np.testing.assert_array_equal(x.grad, [0.0, 0.0])
    y = Tensor(np.zeros(2), requires_grad=True, dtype=np.float64)
    T.leaky_relu(y, 0.2).sum().backward()
    np.testing.assert_allclose(y.grad, [0.2, 0.2])


def test_softmax_channel_forward_and_grad():
    rng = np.random.default_rng(14)
    x = rng.normal(size=(4, 3, 2))
    p = T.softmax_channel(Tensor(x, dtype=np.float64))
    np.testing.assert_allclose(p.data.sum(axis=0), 1.0, atol=1e-12)
    assert p.data.min() > 0
    # invariant to a per-site shift of the logits
    shifted = T.softmax_channel(Tensor(x + 7.5, dtype=np.float64))
    np.testing.assert_allclose(p.data, shifted.data, atol=1e-12)
    w = rng.normal(size=(4, 3, 2))
    for _ in range(5):
        a = rng.normal(size=(4, 3, 2))
        check_grads(lambda ts: (T.softmax_channel(ts[0]) * Tensor(w, dtype=np.float64)).sum(), [a])


def test_conv2d_matches_naive_reference():
    rng = np.random.default_rng(15)
    for stride, padding, kh in ((1, 0, 3), (2, 1, 3), (1, 2, 5), (3, 0, 1)):
        x = rng.normal(size=(3, 9, 8))
        k = rng.normal(size=(2, 3, kh, kh))
        b = rng.normal(size=2)
        out = T.conv2d(Tensor(x, dtype=np.float64), Tensor(k, dtype=np.float64),
                       Tensor(b, dtype=np.float64), stride=stride, padding=padding)
        np.testing.assert_allclose(out.data, ref_conv2d(x, k, b, stride, padding), rtol=1e-10)


def test_conv2d_grads():
    rng = np.random.default_rng(16)
    for stride, padding in ((1, 0), (2, 1)):
        x = rng.normal(size=(2, 6, 7))
        k = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=3)
        w = rng.normal(size=ref_conv2d(x, k, b, stride, padding).shape)

        def build(ts):
            out = T.conv2d(ts[0], ts[1], ts[2], stride=stride, padding=padding)
            return (out * Tensor(w, dtype=np.float64)).sum()

        check_grads(build, [x, k, b])


def test_conv2d_validation():
    x = Tensor(np.zeros((2, 5, 5)))
    k = Tensor(np.zeros((4, 3, 3, 3)))
    with pytest.raises(ValueError):
        T.conv2d(x, k, Tensor(np.zeros(4)))
    with pytest.raises(ValueError):
        T.conv2d(x, Tensor(np.zeros((4, 2, 3, 3))), Tensor(np.zeros(2)))
    with pytest.raises(ValueError):
        T.conv2d(x, Tensor(np.zeros((4, 2, 7, 7))), Tensor(np.zeros(4)))


def test_adaptive_pool_matches_reference():
    rng = np.random.default_rng(17)
    for (h, w, oh, ow) in ((8, 8, 4, 4), (7, 9, 3, 4), (5, 5, 5, 5), (6, 4, 1, 1)):
        x = rng.normal(size=(3, h, w))
        out = T.adaptive_avg_pool2d(Tensor(x, dtype=np.float64), oh, ow)
        np.testing.assert_allclose(out.data, ref_adaptive_pool(x, oh, ow), rtol=1e-12)


def test_adaptive_pool_grads():
    rng = np.random.default_rng(18)
    for (h, w, oh, ow) in ((6, 6, 3, 3), (7, 5, 3, 2)):
        x = rng.normal(size=(2, h, w))
        wgt = rng.normal(size=(2, oh, ow))
        check_grads(lambda ts: (T.adaptive_avg_pool2d(ts[0], oh, ow)
                                * Tensor(wgt, dtype=np.float64)).sum(), [x])


def test_quadrant_pool_layout_and_border():
    rng = np.random.default_rng(19)
    x = rng.normal(size=(2, 11, 13))  # residual rows/cols beyond the grid
    ph, pw = 5, 6
    out = T.quadrant_pool(Tensor(x, dtype=np.float64), ph, pw)
    u, v = 11 // ph, 13 // pw
    assert out.shape == (8, u, v)
    hh, wh = ph // 2, pw // 2
    for i in range(u):
        for j in range(v):
            cell = x[:, i * ph:(i + 1) * ph, j * pw:(j + 1) * pw]
            quads = [cell[:, :hh, :wh], cell[:, :hh, wh:], cell[:, hh:, :wh], cell[:, hh:, wh:]]
            for q, quad in enumerate(quads):
                np.testing.assert_allclose(out.data[q * 2:(q + 1) * 2, i, j],
                                           quad.mean(axis=(1, 2)), rtol=1e-12)


def test_quadrant_pool_grads():
    rng = np.random.default_rng(20)
    x = rng.normal(size=(2, 9, 8))
    w = rng.normal(size=(8, 2, 2))
    check_grads(lambda ts: (T.quadrant_pool(ts[0], 4, 4) * Tensor(w, dtype=np.float64)).sum(), [x])


def test_linear_per_location_grads():
    rng = np.random.default_rng(21)
    x = rng.normal(size=(3, 2, 4))
    w = rng.normal(size=(5, 3))
    b = rng.normal(size=5)
    mix = rng.normal(size=(5, 2, 4))
    check_grads(lambda ts: (T.linear_per_location(ts[0], ts[1], ts[2])
                            * Tensor(mix, dtype=np.float64)).sum(), [x, w, b])
    out = T.linear_per_location(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64),
                                Tensor(b, dtype=np.float64))
    np.testing.assert_allclose(out.data[:, 1, 2], w @ x[:, 1, 2] + b, rtol=1e-12)


def test_gather_sites_forward_and_grad():
    rng = np.random.default_rng(22)
    x = rng.normal(size=(4, 3, 5))
    idx = rng.integers(0, 4, size=(3, 5))
    valid = rng.random((3, 5)) > 0.3
    out = T.gather_sites(Tensor(x, dtype=np.float64), idx, valid)
    expect = [x[idx[i, j], i, j] for i in range(3) for j in range(5) if valid[i, j]]
    np.testing.assert_allclose(out.data, expect, rtol=1e-12)
    w = rng.normal(size=out.shape)
    check_grads(lambda ts: (T.gather_sites(ts[0], idx, valid) * Tensor(w, dtype=np.float64)).sum(), [x])


def test_gather_sites_validation():
    x = Tensor(np.zeros((2, 3, 3)))
    with pytest.raises(ValueError):
        T.gather_sites(x, np.full((3, 3), 2))
    with pytest.raises(ValueError):
        T.gather_sites(x, np.zeros((2, 3), dtype=int))


def test_reused_node_accumulates():
    x = Tensor(np.array([3.0]), requires_grad=True, dtype=np.float64)
    y = x + x
    z = (y * x).sum()  # d/dx (2x^2) = 4x
    z.backward()
    np.testing.assert_allclose(x.grad, [12.0])


def test_diamond_graph():
    x = Tensor(np.array([2.0]), requires_grad=True, dtype=np.float64)
    a = x * 3.0
    b = x * 5.0
    (a * b).sum().backward()  # 15x^2 -> 30x
    np.testing.assert_allclose(x.grad, [60.0])


def test_detach_cuts_graph():
    x = Tensor(np.array([2.0]), requires_grad=True, dtype=np.float64)
    (x.detach() * 3.0).sum().backward()
    assert x.grad is None


def test_no_grad_builds_no_graph():
    x = Tensor(np.array([2.0]), requires_grad=True, dtype=np.float64)
    with T.no_grad():
        y = (x * 3.0).sum()
    assert not y.requires_grad
    y.backward()
    assert x.grad is None


def test_zero_grad_resets():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True, dtype=np.float64)
    (x * x).sum().backward()
    assert x.grad is not None
    x.zero_grad()
    assert x.grad is None
