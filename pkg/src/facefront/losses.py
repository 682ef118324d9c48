"""The seven loss terms.

Every aggregate is mean-normalized (per pixel, per sample, per feature
dimension) rather than an unnormalized sum, so the loss weights carry the
same meaning at any image resolution or batch size. All losses are
non-negative scalars on the tape.

Probability terms go through the two-logit softmax; logs are floored at
1e-12 inside the cross-entropy operator, so a saturated discriminator
yields large finite losses instead of infinities.
"""

import numpy as np

from . import networks, ops
from .morphable import FLIP_SIGN, POSE_DIM

TV_EPS = 1e-8

REAL = 0  # discriminator class indices
GENERATED = 1


def rec_loss(x_out, x_ref):
    """Mean absolute reconstruction error."""
    return ops.mean(ops.absval(ops.sub(x_out, x_ref)))


def tv_loss(x):
    """Isotropic total variation, averaged over interior pixels.

    Both forward differences exist on the (H-1) x (W-1) interior grid; the
    epsilon inside the square root keeps the gradient finite on constant
    images, at the price of a sqrt(eps) floor on the value itself.
    """
    dx = ops.fdiff(x, "dx")
    dy = ops.fdiff(x, "dy")
    mag = ops.sqrt(
        ops.add(
            ops.add(ops.square(dx), ops.square(dy)),
            x.graph.leaf(np.full((1,), TV_EPS)),
        )
    )
    return ops.mean(mag)


def _masked_rms(diff, mask_arr):
    """RMS of the masked difference, normalized by total mask area."""
    area = float(np.sum(mask_arr > 0))
    if area == 0.0:
        return None
    g = diff.graph
    mask = g.leaf(mask_arr)
    masked = ops.mul(diff, mask)
    return ops.sqrt(ops.smul(ops.total(ops.square(masked)), 1.0 / area))


def sym_loss_terms(x_out, x_out_flipview, mask, mask_flip):
    """Symmetry loss from two generator outputs and two visibility masks.

    ``x_out`` is the output for (x, p); ``x_out_flipview`` the output for
    the flipped input and analytically flipped pose. Each mask restricts
    the difference and its RMS is normalized by that mask's area; an empty
    mask contributes zero.
    """
    g = x_out.graph
    diff = ops.sub(x_out, x_out_flipview)
    total = None
    for mk in (mask, mask_flip):
        term = _masked_rms(diff, np.asarray(mk, dtype=np.float64))
        if term is None:
            continue
        total = term if total is None else ops.add(total, term)
    if total is None:
        return g.leaf(np.zeros(()))
    return total


def flip_pose_normalized(p_norm, model):
    """Analytic pose flip applied to z-scored coefficient tensors.

    In raw space flipping negates four pose entries; conjugated with the
    z-scoring it is an affine per-entry map, so gradients flow through.
    """
    sign = np.ones(model.coeff_dim)
    sign[:POSE_DIM] = FLIP_SIGN
    mean = model.coeff_mean
    std = model.coeff_std
    scale = sign * 1.0  # std_j / std_j: flip keeps each entry in its own slot
    offset = (sign * mean - mean) / std
    g = p_norm.graph
    return ops.add(
        ops.mul(p_norm, g.leaf(scale)),
        g.leaf(offset),
    )


def d_loss(logits_real, logits_generated):
    """Discriminator objective: real frontals to REAL, outputs to GENERATED.

    The generated batch must come in detached (plain values), so this loss
    never reaches generator parameters.
    """
    n_r = logits_real.shape[0]
    n_g = logits_generated.shape[0]
    if n_r == 0 or n_g == 0:
        raise ValueError("d_loss: empty batch")
    ce_real = ops.mean(ops.softmax_xent(logits_real, [REAL] * n_r))
    ce_gen = ops.mean(ops.softmax_xent(logits_generated, [GENERATED] * n_g))
    return ops.add(ce_real, ce_gen)


def g_gan_loss(logits_generated):
    """Generator adversarial term: drive P_real up on generated images."""
    n = logits_generated.shape[0]
    if n == 0:
        raise ValueError("g_gan_loss: empty batch")
    return ops.mean(ops.softmax_xent(logits_generated, [REAL] * n))


def c_loss(logits, labels):
    """Mean cross-entropy of the recognizer."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    return ops.mean(ops.softmax_xent(logits, labels))


def g_id_loss(logits_f=None, labels=None, feat_f=None, feat_ref=None):
    """Identity preservation, labeled or feature-matching form.

    Exactly one form must be requested: either (logits_f, labels) for the
    cross-entropy branch or (feat_f, feat_ref) for the mean squared
    feature distance; feat_ref enters as plain values (recognizer frozen).
    """
    labeled = logits_f is not None or labels is not None
    unlabeled = feat_f is not None or feat_ref is not None
    if labeled == unlabeled:
        raise ValueError("g_id_loss: pass exactly one of the two input pairs")
    if labeled:
        if logits_f is None or labels is None:
            raise ValueError("g_id_loss: labeled form needs logits and labels")
        return c_loss(logits_f, labels)
    if feat_f is None or feat_ref is None:
        raise ValueError("g_id_loss: feature form needs both feature sets")
    ref = np.asarray(feat_ref, dtype=np.float64)
    g = feat_f.graph
    return ops.mean(ops.square(ops.sub(feat_f, g.leaf(ref))))


def total_g_loss(weights, terms):
    """Weighted sum of generator loss terms.

    ``terms`` maps term name (rec, tv, sym, gan, ident) to a scalar tensor
    or None; None and zero-weight terms are skipped. At least one term must
    survive.
    """
    total = None
    for name, weight in weights.items():
        t = terms.get(name)
        if t is None or weight == 0.0:
            continue
        contrib = ops.smul(t, float(weight))
        total = contrib if total is None else ops.add(total, contrib)
    if total is None:
        raise ValueError("total_g_loss: no active loss terms")
    return total


def probabilities(logits):
    """(P_real, P_generated) rows from discriminator logits (plain numpy)."""
    return networks.softmax(np.asarray(logits, dtype=np.float64))
