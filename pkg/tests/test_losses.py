"""Loss terms against hand-computed values and closed-form reference
points, plus the guard rails on term selection and batch plumbing."""

import numpy as np
import pytest

from facefront import losses, morphable, ops, synthdata, tensor

from conftest import TINY_SPEC, rand


def _leaf(g, arr):
    return g.leaf(np.asarray(arr, dtype=np.float64))


def test_rec_loss_zero_on_identical():
    g = tensor.Graph()
    x = _leaf(g, rand((2, 1, 4, 4), seed=0))
    assert losses.rec_loss(x, x).data == 0.0


def test_rec_loss_hand_value():
    g = tensor.Graph()
    a = _leaf(g, [[1.0, 2.0], [3.0, 4.0]])
    b = _leaf(g, [[2.0, 2.0], [1.0, 8.0]])
    # |diffs| = 1, 0, 2, 4 -> mean 1.75
    assert abs(losses.rec_loss(a, b).data - 1.75) < 1e-12


def test_tv_loss_constant_floor():
    g = tensor.Graph()
    x = _leaf(g, np.full((1, 1, 8, 8), 0.37))
    # zero differences leave only the epsilon: sqrt(1e-8) = 1e-4
    assert abs(losses.tv_loss(x).data - 1e-4) < 1e-12


def test_tv_loss_hand_value():
    g = tensor.Graph()
    x = _leaf(g, [[[[0.0, 1.0], [2.0, 4.0]]]])
    # dx = 1, dy = 2 on the single interior pixel
    expect = np.sqrt(1.0 + 4.0 + losses.TV_EPS)
    assert abs(losses.tv_loss(x).data - expect) < 1e-12


def test_sym_loss_constant_zero():
    g = tensor.Graph()
    x = _leaf(g, np.full((1, 1, 4, 4), 0.5))
    mask = np.ones((1, 1, 4, 4))
    out = losses.sym_loss_terms(x, x, mask, mask)
    assert out.data == 0.0


def test_sym_loss_hand_value():
    g = tensor.Graph()
    a = np.zeros((1, 1, 2, 2))
    b = np.zeros((1, 1, 2, 2))
    b[0, 0, 0, 0] = 1.0  # single differing pixel
    mask = np.ones((1, 1, 2, 2))
    half = np.zeros((1, 1, 2, 2))
    half[0, 0, :, 0] = 1.0  # covers the differing pixel, area 2
    out = losses.sym_loss_terms(_leaf(g, a), _leaf(g, b), mask, half)
    expect = np.sqrt(1.0 / 4.0) + np.sqrt(1.0 / 2.0)
    assert abs(out.data - expect) < 1e-12


def test_sym_loss_empty_mask_contributes_zero():
    g = tensor.Graph()
    a = _leaf(g, rand((1, 1, 4, 4), seed=1))
    b = _leaf(g, rand((1, 1, 4, 4), seed=2))
    full = np.ones((1, 1, 4, 4))
    out_one = losses.sym_loss_terms(a, b, full, np.zeros((1, 1, 4, 4)))
    out_both = losses.sym_loss_terms(a, b, full, full)
    assert abs(2.0 * out_one.data - out_both.data) < 1e-12
    empty = losses.sym_loss_terms(a, b, np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 4, 4)))
    assert empty.data == 0.0


def test_flip_pose_normalized_matches_raw_flip():
    model = synthdata.make_model(TINY_SPEC)
    rng = np.random.default_rng(5)
    raw = model.coeff_mean + model.coeff_std * rng.standard_normal(model.coeff_dim)
    c = morphable.Coeffs.from_flat(raw, model.dims)
    flipped_raw = morphable.flip_coeffs(c).flat()
    g = tensor.Graph()
    p_norm = _leaf(g, model.normalize(raw)[None, :])
    out = losses.flip_pose_normalized(p_norm, model)
    expect = model.normalize(flipped_raw)
    np.testing.assert_allclose(out.data[0], expect, atol=1e-12)


def test_flip_pose_normalized_involution():
    model = synthdata.make_model(TINY_SPEC)
    g = tensor.Graph()
    p = _leaf(g, rand((3, model.coeff_dim), seed=6, scale=1.5))
    twice = losses.flip_pose_normalized(losses.flip_pose_normalized(p, model), model)
    np.testing.assert_allclose(twice.data, p.data, atol=1e-12)


def test_d_loss_uniform_is_2ln2():
    g = tensor.Graph()
    lr = _leaf(g, np.zeros((4, 2)))
    lg = _leaf(g, np.zeros((4, 2)))
    assert abs(losses.d_loss(lr, lg).data - 2.0 * np.log(2.0)) < 1e-12


def test_d_loss_prefers_correct_split():
    g = tensor.Graph()
    # logits strongly favoring the right class on both batches
    lr = _leaf(g, [[10.0, 0.0]] * 3)
    lg = _leaf(g, [[0.0, 10.0]] * 3)
    good = losses.d_loss(lr, lg).data
    bad = losses.d_loss(lg, lr).data
    assert good < 1e-3 < bad


def test_d_loss_empty_batch_rejected():
    g = tensor.Graph()
    with pytest.raises(ValueError):
        losses.d_loss(_leaf(g, np.zeros((0, 2))), _leaf(g, np.zeros((2, 2))))


def test_g_gan_loss_uniform_is_ln2():
    g = tensor.Graph()
    lg = _leaf(g, np.zeros((6, 2)))
    assert abs(losses.g_gan_loss(lg).data - np.log(2.0)) < 1e-12


def test_c_loss_uniform_is_ln_k():
    g = tensor.Graph()
    for k in (2, 5, 9):
        logits = _leaf(g, np.zeros((3, k)))
        got = losses.c_loss(logits, [0, 1, k - 1]).data
        assert abs(got - np.log(k)) < 1e-12


def test_g_id_loss_labeled_equals_c_loss():
    g = tensor.Graph()
    logits = _leaf(g, rand((4, 5), seed=7, scale=2.0))
    labels = [0, 2, 4, 1]
    a = losses.g_id_loss(logits_f=logits, labels=labels).data
    b = losses.c_loss(logits, labels).data
    assert a == b


def test_g_id_loss_feature_form_hand_value():
    g = tensor.Graph()
    feat = _leaf(g, [[1.0, 2.0], [3.0, 4.0]])
    ref = np.array([[1.0, 0.0], [0.0, 4.0]])
    # squared diffs: 0, 4, 9, 0 -> mean 3.25
    got = losses.g_id_loss(feat_f=feat, feat_ref=ref).data
    assert abs(got - 3.25) < 1e-12


def test_g_id_loss_form_validation():
    g = tensor.Graph()
    logits = _leaf(g, np.zeros((2, 3)))
    feat = _leaf(g, np.zeros((2, 4)))
    with pytest.raises(ValueError):
        losses.g_id_loss()
    with pytest.raises(ValueError):
        losses.g_id_loss(logits_f=logits, labels=[0, 1], feat_f=feat,
                         feat_ref=np.zeros((2, 4)))
    with pytest.raises(ValueError):
        losses.g_id_loss(logits_f=logits)
    with pytest.raises(ValueError):
        losses.g_id_loss(feat_f=feat)


def test_total_g_loss_weighted_sum_and_skips():
    g = tensor.Graph()
    t1 = ops.mean(_leaf(g, [2.0, 4.0]))  # 3
    t2 = ops.mean(_leaf(g, [10.0]))  # 10
    weights = {"rec": 0.5, "tv": 0.0, "sym": 2.0, "gan": 1.0, "ident": 1.0}
    terms = {"rec": t1, "tv": t2, "sym": t2, "gan": None, "ident": None}
    out = losses.total_g_loss(weights, terms)
    assert abs(out.data - (0.5 * 3.0 + 2.0 * 10.0)) < 1e-12


def test_total_g_loss_requires_a_term():
    with pytest.raises(ValueError):
        losses.total_g_loss({"rec": 1.0}, {"rec": None})


def test_d_loss_isolated_from_generator_branch():
    # generated logits arrive as plain values: no path back to G
    g = tensor.Graph()
    gen_param = g.parameter(rand((3, 2), seed=8))
    detached = g.leaf(gen_param.data.copy())
    real = g.parameter(rand((3, 2), seed=9))
    gm = g.backward(losses.d_loss(real, detached))
    assert gm.get(real).any()
    assert not gm.get(gen_param).any()


def test_probabilities_rows():
    logits = np.array([[0.0, 0.0], [np.log(3.0), 0.0]])
    p = losses.probabilities(logits)
    np.testing.assert_allclose(p[0], [0.5, 0.5], atol=1e-12)
    np.testing.assert_allclose(p[1], [0.75, 0.25], atol=1e-12)
    assert losses.REAL == 0 and losses.GENERATED == 1
