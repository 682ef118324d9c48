import numpy as np
import pytest

from facefront import ops
from facefront.tensor import Graph, GraphError, ShapeError, UnknownOpError


def test_leaf_converts_to_float64():
    g = Graph()
    t = g.leaf([[1, 2], [3, 4]])
    assert t.data.dtype == np.float64
    assert t.shape == (2, 2)
    assert not g.node(t.node_id).is_param


def test_parameter_flag_set():
    g = Graph()
    p = g.parameter(np.zeros(3), name="w")
    assert g.node(p.node_id).is_param
    assert g.node(p.node_id).name == "w"


def test_add_sub_mul_values_and_broadcast():
    g = Graph()
    a = g.leaf([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    b = g.leaf([10.0, 20.0, 30.0])
    assert np.array_equal(ops.add(a, b).data, [[11, 22, 33], [14, 25, 36]])
    assert np.array_equal(ops.sub(a, b).data, [[-9, -18, -27], [-6, -15, -24]])
    assert np.array_equal(ops.mul(a, b).data, [[10, 40, 90], [40, 100, 180]])


def test_add_shape_mismatch_raises():
    g = Graph()
    with pytest.raises(ShapeError):
        ops.add(g.leaf(np.zeros((2, 3))), g.leaf(np.zeros((4,))))


def test_smul():
    g = Graph()
    assert np.array_equal(ops.smul(g.leaf([1.0, -2.0]), -3.0).data, [-3.0, 6.0])


def test_matmul_hand_value():
    g = Graph()
    a = g.leaf([[1.0, 2.0], [3.0, 4.0]])
    b = g.leaf([[5.0, 6.0], [7.0, 8.0]])
    assert np.array_equal(ops.matmul(a, b).data, [[19.0, 22.0], [43.0, 50.0]])
    with pytest.raises(ShapeError):
        ops.matmul(a, g.leaf(np.zeros((3, 2))))


def test_conv2d_identity_kernel_preserves_input():
    g = Graph()
    rng = np.random.default_rng(5)
    x = g.leaf(rng.standard_normal((2, 3, 5, 5)))
    w = np.zeros((3, 3, 3, 3))
    for c in range(3):
        w[c, c, 1, 1] = 1.0
    out = ops.conv2d(x, g.leaf(w), stride=1, pad=1)
    assert np.allclose(out.data, x.data, atol=1e-15)


def test_conv2d_single_window_is_dot_product():
    g = Graph()
    rng = np.random.default_rng(6)
    xv = rng.standard_normal((1, 2, 3, 3))
    wv = rng.standard_normal((1, 2, 3, 3))
    out = ops.conv2d(g.leaf(xv), g.leaf(wv), stride=1, pad=0)
    assert out.shape == (1, 1, 1, 1)
    assert np.isclose(out.data[0, 0, 0, 0], float((xv * wv).sum()), rtol=1e-13)


def test_conv2d_stride2_shape():
    g = Graph()
    out = ops.conv2d(g.leaf(np.zeros((1, 1, 8, 8))), g.leaf(np.zeros((4, 1, 3, 3))),
                     stride=2, pad=1)
    assert out.shape == (1, 4, 4, 4)


def test_upsample2x_nearest():
    g = Graph()
    x = g.leaf(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
    out = ops.upsample2x(x)
    expect = [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]]
    assert np.array_equal(out.data[0, 0], expect)


def test_activations_hand_values():
    g = Graph()
    x = g.leaf([-2.0, 0.5, 3.0])
    assert np.array_equal(ops.relu(x).data, [0.0, 0.5, 3.0])
    assert np.allclose(ops.leaky_relu(x).data, [-0.4, 0.5, 3.0])
    assert np.allclose(ops.leaky_relu(x, slope=0.1).data, [-0.2, 0.5, 3.0])
    assert np.allclose(ops.tanh(x).data, np.tanh([-2.0, 0.5, 3.0]))
    sig = 1.0 / (1.0 + np.exp(-np.array([-2.0, 0.5, 3.0])))
    assert np.allclose(ops.sigmoid(x).data, sig, rtol=1e-15)


def test_sigmoid_extreme_inputs_stay_finite():
    g = Graph()
    out = ops.sigmoid(g.leaf([-800.0, 800.0])).data
    assert np.all(np.isfinite(out))
    assert out[0] >= 0.0 and out[1] <= 1.0


def test_mean_and_sum_reductions():
    g = Graph()
    x = g.leaf([[1.0, 2.0], [3.0, 4.0]])
    m = ops.mean(x)
    assert m.shape == ()
    assert m.data == 2.5
    s = ops.total(x, axes=(0,))
    assert np.array_equal(s.data, [4.0, 6.0])
    assert ops.total(x).data == 10.0


def test_abs_square_sqrt():
    g = Graph()
    x = g.leaf([-3.0, 4.0])
    assert np.array_equal(ops.absval(x).data, [3.0, 4.0])
    assert np.array_equal(ops.square(x).data, [9.0, 16.0])
    assert np.array_equal(ops.sqrt(ops.square(x)).data, [3.0, 4.0])
    with pytest.raises(ValueError):
        ops.sqrt(g.leaf([-1.0]))


def test_concat_and_slice_channels_roundtrip():
    g = Graph()
    a = g.leaf(np.arange(8.0).reshape(1, 2, 2, 2))
    b = g.leaf(np.arange(8.0, 12.0).reshape(1, 1, 2, 2))
    cat = ops.concat([a, b])
    assert cat.shape == (1, 3, 2, 2)
    assert np.array_equal(ops.slice_channels(cat, 0, 2).data, a.data)
    assert np.array_equal(ops.slice_channels(cat, 2, 3).data, b.data)
    with pytest.raises(ShapeError):
        ops.slice_channels(cat, 2, 5)


def test_hflip_reverses_last_axis_and_is_involutive():
    g = Graph()
    x = g.leaf(np.arange(6.0).reshape(2, 3))
    f = ops.hflip(x)
    assert np.array_equal(f.data, [[2, 1, 0], [5, 4, 3]])
    assert np.array_equal(ops.hflip(f).data, x.data)


def test_softmax_xent_uniform_logits():
    g = Graph()
    logits = g.leaf(np.zeros((3, 4)))
    out = ops.softmax_xent(logits, [0, 1, 3])
    assert np.allclose(out.data, np.log(4.0), rtol=1e-15)
    with pytest.raises(ValueError):
        ops.softmax_xent(logits, [0, 1, 4])


def test_fdiff_hand_case():
    g = Graph()
    x = g.leaf(np.array([[[[1.0, 3.0], [6.0, 10.0]]]]))
    assert np.array_equal(ops.fdiff(x, "dx").data, [[[[2.0]]]])
    assert np.array_equal(ops.fdiff(x, "dy").data, [[[[5.0]]]])
    with pytest.raises(ValueError):
        ops.fdiff(x, "dz")


def test_reshape_roundtrip_and_mismatch():
    g = Graph()
    x = g.leaf(np.arange(6.0))
    r = ops.reshape(x, (2, 3))
    assert np.array_equal(r.data, [[0, 1, 2], [3, 4, 5]])
    with pytest.raises(ShapeError):
        ops.reshape(x, (4, 2))


def test_unknown_op_rejected():
    g = Graph()
    with pytest.raises(UnknownOpError):
        g.record("no-such-op", [g.leaf(np.zeros(1))])


def test_cross_graph_input_rejected():
    g1, g2 = Graph(), Graph()
    with pytest.raises(GraphError):
        ops.add(g1.leaf(np.zeros(2)), g2.leaf(np.zeros(2)))


# ---------------------------------------------------------------------------
# backward mechanics


def test_backward_chain_matches_analytic_formula():
    # f = mean((x*y + x)^2); df/dx = 2(x*y+x)(y+1)/n, df/dy = 2(x*y+x)x/n
    g = Graph()
    xv = np.array([0.5, -1.5, 2.0])
    yv = np.array([1.0, 0.25, -2.0])
    x = g.parameter(xv)
    y = g.parameter(yv)
    f = ops.mean(ops.square(ops.add(ops.mul(x, y), x)))
    grads = g.backward(f)
    u = xv * yv + xv
    assert np.allclose(grads.get(x), 2.0 * u * (yv + 1.0) / 3.0, rtol=1e-14)
    assert np.allclose(grads.get(y), 2.0 * u * xv / 3.0, rtol=1e-14)


def test_backward_broadcast_sums_over_expanded_axes():
    g = Graph()
    a = g.parameter(np.ones((2, 3)))
    b = g.parameter(np.array([1.0, 2.0, 3.0]))
    loss = ops.total(ops.mul(a, b))
    grads = g.backward(loss)
    assert np.array_equal(grads.get(a), np.tile([1.0, 2.0, 3.0], (2, 1)))
    assert np.array_equal(grads.get(b), [2.0, 2.0, 2.0])


def test_reused_tensor_accumulates_gradient():
    g = Graph()
    x = g.parameter(np.array([3.0]))
    loss = ops.total(ops.add(x, x))
    grads = g.backward(loss)
    assert np.array_equal(grads.get(x), [2.0])


def test_frozen_leaf_gets_zero_gradient():
    g = Graph()
    x = g.parameter(np.array([1.0, 2.0]))
    c = g.leaf(np.array([5.0, 5.0]))
    loss = ops.total(ops.mul(x, c))
    grads = g.backward(loss)
    assert c not in grads
    assert np.array_equal(grads.get(c), [0.0, 0.0])
    assert np.array_equal(grads.get(x), [5.0, 5.0])


def test_detach_blocks_gradient():
    g = Graph()
    x = g.parameter(np.array([2.0]))
    d = ops.square(x).detach()
    loss = ops.total(ops.mul(d, x))
    grads = g.backward(loss)
    # only the direct factor contributes: d(4*x)/dx = 4
    assert np.array_equal(grads.get(x), [4.0])


def test_softmax_xent_gradient_is_softmax_minus_onehot():
    g = Graph()
    logits = g.parameter(np.zeros((1, 2)))
    loss = ops.mean(ops.softmax_xent(logits, [0]))
    grads = g.backward(loss)
    assert np.allclose(grads.get(logits), [[-0.5, 0.5]], rtol=1e-15)


def test_mean_gradient_spreads_evenly():
    g = Graph()
    x = g.parameter(np.zeros((2, 2)))
    grads = g.backward(ops.mean(x))
    assert np.allclose(grads.get(x), np.full((2, 2), 0.25))


def test_backward_requires_scalar_loss():
    g = Graph()
    x = g.parameter(np.zeros(3))
    with pytest.raises(GraphError):
        g.backward(ops.square(x))


def test_backward_twice_needs_reset():
    g = Graph()
    x = g.parameter(np.array([1.0]))
    loss = ops.total(ops.square(x))
    g.backward(loss)
    with pytest.raises(GraphError):
        g.backward(loss)
    g.reset_backward()
    grads = g.backward(loss)
    assert np.array_equal(grads.get(x), [2.0])


def test_zero_dim_reduction_backward_through_sqrt():
    # sqrt of a 0-d reduction must keep 0-d adjoints intact
    g = Graph()
    x = g.parameter(np.array([3.0, 4.0]))
    loss = ops.sqrt(ops.total(ops.square(x)))
    assert loss.shape == ()
    grads = g.backward(loss)
    assert np.allclose(grads.get(x), [0.6, 0.8], rtol=1e-14)
