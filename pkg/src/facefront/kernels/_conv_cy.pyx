"""Compiled conv2d kernels: direct-loop forward and backward.

Same contract as conv_py; inputs must be C-contiguous float64. Output
rows accumulate in private scratch buffers (provably alias-free, so the
column loops vectorize) and the channel loops are tiled four wide so
every input row loaded from memory feeds four fused multiply-adds.
"""

import numpy as np

from libc.stdlib cimport free, malloc
from libc.string cimport memset


cdef inline Py_ssize_t _q_lo(Py_ssize_t off, Py_ssize_t stride) noexcept nogil:
    cdef Py_ssize_t q = 0
    while q * stride + off < 0:
        q += 1
    return q


cdef inline Py_ssize_t _q_hi(Py_ssize_t wo, Py_ssize_t q_lo, Py_ssize_t off,
                             Py_ssize_t stride, Py_ssize_t wd) noexcept nogil:
    cdef Py_ssize_t q = wo
    while q > q_lo and (q - 1) * stride + off >= wd:
        q -= 1
    return q


cdef inline void _axpy1(double* a0, const double* xp, double w0,
                        Py_ssize_t q0, Py_ssize_t q1,
                        Py_ssize_t stride) noexcept nogil:
    cdef Py_ssize_t q
    if stride == 1:
        for q in range(q0, q1):
            a0[q] += w0 * xp[q]
    elif stride == 2:
        for q in range(q0, q1):
            a0[q] += w0 * xp[2 * q]
    else:
        for q in range(q0, q1):
            a0[q] += w0 * xp[q * stride]


cdef inline void _axpy4(double* a0, double* a1, double* a2, double* a3,
                        const double* xp, double w0, double w1, double w2,
                        double w3, Py_ssize_t q0, Py_ssize_t q1,
                        Py_ssize_t stride) noexcept nogil:
    cdef Py_ssize_t q
    cdef double v
    if stride == 1:
        for q in range(q0, q1):
            v = xp[q]
            a0[q] += w0 * v
            a1[q] += w1 * v
            a2[q] += w2 * v
            a3[q] += w3 * v
    elif stride == 2:
        for q in range(q0, q1):
            v = xp[2 * q]
            a0[q] += w0 * v
            a1[q] += w1 * v
            a2[q] += w2 * v
            a3[q] += w3 * v
    else:
        for q in range(q0, q1):
            v = xp[q * stride]
            a0[q] += w0 * v
            a1[q] += w1 * v
            a2[q] += w2 * v
            a3[q] += w3 * v


cdef inline void _gather1(double* acc, const double* g0, double w0,
                          Py_ssize_t q0, Py_ssize_t q1, Py_ssize_t off,
                          Py_ssize_t stride) noexcept nogil:
    # acc[q * stride + off] += w0 * g0[q]
    cdef Py_ssize_t q
    cdef double* ap = acc + off
    if stride == 1:
        for q in range(q0, q1):
            ap[q] += w0 * g0[q]
    elif stride == 2:
        for q in range(q0, q1):
            ap[2 * q] += w0 * g0[q]
    else:
        for q in range(q0, q1):
            ap[q * stride] += w0 * g0[q]


cdef inline void _gather4(double* acc, const double* g0, const double* g1,
                          const double* g2, const double* g3, double w0,
                          double w1, double w2, double w3, Py_ssize_t q0,
                          Py_ssize_t q1, Py_ssize_t off,
                          Py_ssize_t stride) noexcept nogil:
    # acc[q * stride + off] += sum of four weighted gradient rows
    cdef Py_ssize_t q
    cdef double* ap = acc + off
    if stride == 1:
        for q in range(q0, q1):
            ap[q] += (w0 * g0[q] + w1 * g1[q]) + (w2 * g2[q] + w3 * g3[q])
    elif stride == 2:
        for q in range(q0, q1):
            ap[2 * q] += (w0 * g0[q] + w1 * g1[q]) + (w2 * g2[q] + w3 * g3[q])
    else:
        for q in range(q0, q1):
            ap[q * stride] += (w0 * g0[q] + w1 * g1[q]) + (w2 * g2[q] + w3 * g3[q])


cdef inline void _dot4(double* s, const double* gp, const double* x0,
                       const double* x1, const double* x2, const double* x3,
                       Py_ssize_t q0, Py_ssize_t q1,
                       Py_ssize_t stride) noexcept nogil:
    # s[k] += sum of gp[q] * xk[q * stride] over four input rows
    cdef Py_ssize_t q, qs
    cdef double g
    cdef double t0 = 0.0, t1 = 0.0, t2 = 0.0, t3 = 0.0
    if stride == 1:
        for q in range(q0, q1):
            g = gp[q]
            t0 += g * x0[q]
            t1 += g * x1[q]
            t2 += g * x2[q]
            t3 += g * x3[q]
    else:
        for q in range(q0, q1):
            qs = q * stride
            g = gp[q]
            t0 += g * x0[qs]
            t1 += g * x1[qs]
            t2 += g * x2[qs]
            t3 += g * x3[qs]
    s[0] += t0
    s[1] += t1
    s[2] += t2
    s[3] += t3


cdef inline double _dot1(const double* gp, const double* xp, Py_ssize_t q0,
                         Py_ssize_t q1, Py_ssize_t stride) noexcept nogil:
    # four lanes so the adds pipeline
    cdef double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0
    cdef Py_ssize_t q, tail
    tail = q0 + ((q1 - q0) & ~<Py_ssize_t>3)
    if stride == 1:
        for q in range(q0, tail, 4):
            s0 += gp[q] * xp[q]
            s1 += gp[q + 1] * xp[q + 1]
            s2 += gp[q + 2] * xp[q + 2]
            s3 += gp[q + 3] * xp[q + 3]
        for q in range(tail, q1):
            s0 += gp[q] * xp[q]
    else:
        for q in range(q0, tail, 4):
            s0 += gp[q] * xp[q * stride]
            s1 += gp[q + 1] * xp[(q + 1) * stride]
            s2 += gp[q + 2] * xp[(q + 2) * stride]
            s3 += gp[q + 3] * xp[(q + 3) * stride]
        for q in range(tail, q1):
            s0 += gp[q] * xp[q * stride]
    return (s0 + s1) + (s2 + s3)


def conv2d_forward(double[:, :, :, ::1] x, double[:, :, :, ::1] w,
                   int stride=1, int pad=1):
    cdef Py_ssize_t n = x.shape[0], ci = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t co = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t wo = (wd + 2 * pad - kw) // stride + 1
    out_arr = np.empty((n, co, ho, wo), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t row = wo if wo > 0 else 1
    cdef double* acc = <double*> malloc(4 * row * sizeof(double))
    if acc == NULL:
        raise MemoryError()
    cdef const double* xrow
    cdef const double* xp
    cdef Py_ssize_t b, o, ot, r, c, i, j, q, hi, off, q0, q1, co4
    try:
        with nogil:
            co4 = co - co % 4
            for b in range(n):
                for r in range(ho):
                    for ot in range(0, co4, 4):
                        memset(acc, 0, 4 * row * sizeof(double))
                        for c in range(ci):
                            for i in range(kh):
                                hi = r * stride + i - pad
                                if hi < 0 or hi >= h:
                                    continue
                                xrow = &x[b, c, hi, 0]
                                for j in range(kw):
                                    off = j - pad
                                    q0 = _q_lo(off, stride)
                                    q1 = _q_hi(wo, q0, off, stride, wd)
                                    _axpy4(acc, acc + row, acc + 2 * row,
                                           acc + 3 * row, xrow + off,
                                           w[ot, c, i, j], w[ot + 1, c, i, j],
                                           w[ot + 2, c, i, j], w[ot + 3, c, i, j],
                                           q0, q1, stride)
                        for o in range(4):
                            xp = acc + o * row
                            for q in range(wo):
                                out[b, ot + o, r, q] = xp[q]
                    for ot in range(co4, co):
                        memset(acc, 0, row * sizeof(double))
                        for c in range(ci):
                            for i in range(kh):
                                hi = r * stride + i - pad
                                if hi < 0 or hi >= h:
                                    continue
                                xrow = &x[b, c, hi, 0]
                                for j in range(kw):
                                    off = j - pad
                                    q0 = _q_lo(off, stride)
                                    q1 = _q_hi(wo, q0, off, stride, wd)
                                    _axpy1(acc, xrow + off, w[ot, c, i, j],
                                           q0, q1, stride)
                        for q in range(wo):
                            out[b, ot, r, q] = acc[q]
    finally:
        free(acc)
    return out_arr


def conv2d_backward(double[:, :, :, ::1] x, double[:, :, :, ::1] w,
                    int stride, int pad, double[:, :, :, ::1] gout):
    """Gradients of a scalar loss w.r.t. conv input and weights."""
    cdef Py_ssize_t n = x.shape[0], ci = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t co = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = gout.shape[2], wo = gout.shape[3]
    gx_arr = np.empty((n, ci, h, wd), dtype=np.float64)
    gw_arr = np.zeros((co, ci, kh, kw), dtype=np.float64)
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef double[:, :, :, ::1] gw = gw_arr
    cdef Py_ssize_t row = wd if wd > 0 else 1
    cdef double* acc = <double*> malloc(row * sizeof(double))
    if acc == NULL:
        raise MemoryError()
    cdef const double* xrow
    cdef const double* grow
    cdef double s[4]
    cdef Py_ssize_t b, o, c, ct, i, j, r, q, hi, t, off, q0, q1, wi, ci4, co4
    try:
        with nogil:
            # weight gradients: dot products, four input channels per pass
            ci4 = ci - ci % 4
            for o in range(co):
                for i in range(kh):
                    for j in range(kw):
                        off = j - pad
                        q0 = _q_lo(off, stride)
                        q1 = _q_hi(wo, q0, off, stride, wd)
                        for ct in range(0, ci4, 4):
                            s[0] = s[1] = s[2] = s[3] = 0.0
                            for b in range(n):
                                for r in range(ho):
                                    hi = r * stride + i - pad
                                    if hi < 0 or hi >= h:
                                        continue
                                    _dot4(s, &gout[b, o, r, 0],
                                          &x[b, ct, hi, 0] + off,
                                          &x[b, ct + 1, hi, 0] + off,
                                          &x[b, ct + 2, hi, 0] + off,
                                          &x[b, ct + 3, hi, 0] + off,
                                          q0, q1, stride)
                            gw[o, ct, i, j] = s[0]
                            gw[o, ct + 1, i, j] = s[1]
                            gw[o, ct + 2, i, j] = s[2]
                            gw[o, ct + 3, i, j] = s[3]
                        for ct in range(ci4, ci):
                            s[0] = 0.0
                            for b in range(n):
                                for r in range(ho):
                                    hi = r * stride + i - pad
                                    if hi < 0 or hi >= h:
                                        continue
                                    s[0] += _dot1(&gout[b, o, r, 0],
                                                  &x[b, ct, hi, 0] + off,
                                                  q0, q1, stride)
                            gw[o, ct, i, j] = s[0]
            # input gradients: each gx row accumulates in the scratch
            # buffer, four output channels folded per pass
            co4 = co - co % 4
            for b in range(n):
                for c in range(ci):
                    for hi in range(h):
                        memset(acc, 0, row * sizeof(double))
                        for i in range(kh):
                            t = hi + pad - i
                            if t < 0 or t % stride != 0:
                                continue
                            r = t // stride
                            if r >= ho:
                                continue
                            for j in range(kw):
                                off = j - pad
                                q0 = _q_lo(off, stride)
                                q1 = _q_hi(wo, q0, off, stride, wd)
                                for o in range(0, co4, 4):
                                    _gather4(acc, &gout[b, o, r, 0],
                                             &gout[b, o + 1, r, 0],
                                             &gout[b, o + 2, r, 0],
                                             &gout[b, o + 3, r, 0],
                                             w[o, c, i, j], w[o + 1, c, i, j],
                                             w[o + 2, c, i, j], w[o + 3, c, i, j],
                                             q0, q1, off, stride)
                                for o in range(co4, co):
                                    _gather1(acc, &gout[b, o, r, 0],
                                             w[o, c, i, j], q0, q1, off, stride)
                        for wi in range(wd):
                            gx[b, c, hi, wi] = acc[wi]
    finally:
        free(acc)
    return gx_arr, gw_arr
