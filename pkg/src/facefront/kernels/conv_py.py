"""Pure numpy conv2d kernels (im2col formulation).

Weights are laid out (c_out, c_in, kh, kw); activations (n, c, h, w).
Zero padding, square stride. All arrays are float64 and C contiguous.
"""

import numpy as np


def _out_size(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def _im2col(xp, kh, kw, stride, ho, wo):
    n, c, hp, wp = xp.shape
    s0, s1, s2, s3 = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, kh, kw, ho, wo),
        strides=(s0, s1, s2, s3, s2 * stride, s3 * stride),
        writeable=False,
    )
    # reshape copies; the view itself must never be written through
    return view.reshape(n, c * kh * kw, ho * wo)


def conv2d_forward(x, w, stride=1, pad=1):
    n, ci, h, wd = x.shape
    co, ci2, kh, kw = w.shape
    ho = _out_size(h, kh, stride, pad)
    wo = _out_size(wd, kw, stride, pad)
    if pad:
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    else:
        xp = x
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    out = np.matmul(w.reshape(co, -1), cols)
    return np.ascontiguousarray(out.reshape(n, co, ho, wo))


def conv2d_backward(x, w, stride, pad, gout):
    """Gradients of a scalar loss w.r.t. conv input and weights."""
    n, ci, h, wd = x.shape
    co, _, kh, kw = w.shape
    ho, wo = gout.shape[2], gout.shape[3]
    if pad:
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    else:
        xp = x
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    gmat = gout.reshape(n, co, ho * wo)

    gw = np.einsum("nop,nkp->ok", gmat, cols, optimize=True).reshape(w.shape)

    gcols = np.matmul(w.reshape(co, -1).T, gmat)
    gc = gcols.reshape(n, ci, kh, kw, ho, wo)
    gxp = np.zeros_like(xp)
    for i in range(kh):
        hi_stop = i + (ho - 1) * stride + 1
        for j in range(kw):
            wi_stop = j + (wo - 1) * stride + 1
            gxp[:, :, i:hi_stop:stride, j:wi_stop:stride] += gc[:, :, i, j]
    if pad:
        gx = gxp[:, :, pad : pad + h, pad : pad + wd]
    else:
        gx = gxp
    return np.ascontiguousarray(gx), np.ascontiguousarray(gw)
