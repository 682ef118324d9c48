import numpy as np

from facefront import gradcheck, ops
from facefront.tensor import Graph


def _quadratic(arrays):
    g = Graph()
    x = g.parameter(arrays[0])
    loss = ops.total(ops.square(x))
    grads = g.backward(loss)
    return float(loss.data), [grads.get(x)]


def test_checker_accepts_correct_gradient():
    x = np.array([0.3, -1.2, 2.5])
    err = gradcheck.max_directional_error(_quadratic, [x], n_directions=10)
    assert err < 1e-7


def test_checker_rejects_corrupted_gradient():
    def wrong(arrays):
        loss, grads = _quadratic(arrays)
        return loss, [1.5 * grads[0]]

    err = gradcheck.max_directional_error(wrong, [np.array([0.3, -1.2, 2.5])])
    assert err > 1e-2


def test_checker_rejects_sign_flip():
    def flipped(arrays):
        loss, grads = _quadratic(arrays)
        return loss, [-grads[0]]

    err = gradcheck.max_directional_error(flipped, [np.array([1.0, 2.0])])
    assert err > 1e-1


def test_directions_are_seeded():
    x = np.array([0.7, -0.4])
    a = gradcheck.directional_errors(_quadratic, [x], n_directions=5, seed=11)
    b = gradcheck.directional_errors(_quadratic, [x], n_directions=5, seed=11)
    c = gradcheck.directional_errors(_quadratic, [x], n_directions=5, seed=12)
    assert a == b
    assert a != c


def test_multi_input_gradients():
    def f(arrays):
        g = Graph()
        a = g.parameter(arrays[0])
        b = g.parameter(arrays[1])
        loss = ops.mean(ops.square(ops.sub(ops.mul(a, b), ops.tanh(a))))
        grads = g.backward(loss)
        return float(loss.data), [grads.get(a), grads.get(b)]

    rng = np.random.default_rng(2)
    err = gradcheck.max_directional_error(
        f, [rng.standard_normal((3, 2)), rng.standard_normal((3, 2))]
    )
    assert err < 1e-6


def test_away_from_pushes_points_off_kinks():
    x = np.array([-0.005, 0.0, 0.004, 0.5, 1.002])
    out = gradcheck.away_from(x, centers=(0.0, 1.0), margin=0.01)
    assert np.all(np.minimum(np.abs(out), np.abs(out - 1.0)) >= 0.01 - 1e-15)
    # far points untouched
    assert out[3] == 0.5
    # sign of the push follows the side of the kink
    assert out[0] == -0.01 and out[2] == 0.01
