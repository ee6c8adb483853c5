# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: im2col/col2im patch rearrangement and 2x2 max pooling.

These routines dominate the runtime of convolution forward/backward passes.
The pure-NumPy equivalents live in ``numpy_backend`` and must stay
behaviourally identical (same shapes, same tie-breaking in the pooling
argmax).
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

ctypedef fused real:
    float
    double


def im2col(real[:, :, :, ::1] x, int kh, int kw, int stride, int pad):
    """Rearrange (N,C,H,W) into (N, OH*OW, C*kh*kw) patch rows. Out-of-frame
    taps read as zero.

    Loop order keeps the writes sequential (the patch row is the innermost
    dimension of the output), which is what makes this faster than the
    slice-based fallback."""
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - kw) // stride + 1
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((n, oh * ow, c * kh * kw), dtype=dtype)
    cdef real[:, :, ::1] out = out_arr
    cdef Py_ssize_t b, ch, i, j, y, z, sy, sx, row, col
    with nogil:
        for b in range(n):
            for y in range(oh):
                for z in range(ow):
                    row = y * ow + z
                    col = 0
                    for ch in range(c):
                        for i in range(kh):
                            sy = y * stride + i - pad
                            if sy < 0 or sy >= h:
                                col += kw
                                continue
                            for j in range(kw):
                                sx = z * stride + j - pad
                                if 0 <= sx < w:
                                    out[b, row, col] = x[b, ch, sy, sx]
                                col += 1
    return out_arr


def col2im(real[:, :, ::1] cols, Py_ssize_t h, Py_ssize_t w,
           int kh, int kw, int stride, int pad):
    """Scatter-add the inverse of :func:`im2col`; returns (N,C,H,W)."""
    cdef Py_ssize_t n = cols.shape[0]
    cdef Py_ssize_t c = cols.shape[2] // (kh * kw)
    cdef Py_ssize_t oh = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - kw) // stride + 1
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((n, c, h, w), dtype=dtype)
    cdef real[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, ch, i, j, y, z, sy, sx, row, col
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(kh):
                    for j in range(kw):
                        col = (ch * kh + i) * kw + j
                        for y in range(oh):
                            sy = y * stride + i - pad
                            if sy < 0 or sy >= h:
                                continue
                            row = y * ow
                            for z in range(ow):
                                sx = z * stride + j - pad
                                if 0 <= sx < w:
                                    out[b, ch, sy, sx] += cols[b, row + z, col]
    return out_arr


def maxpool2x2(real[:, :, :, ::1] x):
    """2x2/stride-2 max pooling. Returns (out, argmax) where argmax holds the
    row-major window index (0..3) of the first maximum."""
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = h // 2, ow = w // 2
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((n, c, oh, ow), dtype=dtype)
    arg_arr = np.empty((n, c, oh, ow), dtype=np.uint8)
    cdef real[:, :, :, ::1] out = out_arr
    cdef unsigned char[:, :, :, ::1] arg = arg_arr
    cdef Py_ssize_t b, ch, y, z, sy, sx
    cdef real best, v
    cdef unsigned char k, besti
    with nogil:
        for b in range(n):
            for ch in range(c):
                for y in range(oh):
                    sy = 2 * y
                    for z in range(ow):
                        sx = 2 * z
                        best = x[b, ch, sy, sx]
                        besti = 0
                        for k in range(1, 4):
                            v = x[b, ch, sy + (k >> 1), sx + (k & 1)]
                            if v > best:
                                best = v
                                besti = k
                        out[b, ch, y, z] = best
                        arg[b, ch, y, z] = besti
    return out_arr, arg_arr


def maxpool2x2_backward(real[:, :, :, ::1] dout,
                        unsigned char[:, :, :, ::1] arg,
                        Py_ssize_t h, Py_ssize_t w):
    """Route pooled gradients back to the recorded argmax positions."""
    cdef Py_ssize_t n = dout.shape[0], c = dout.shape[1]
    cdef Py_ssize_t oh = dout.shape[2], ow = dout.shape[3]
    dtype = np.float32 if real is float else np.float64
    dx_arr = np.zeros((n, c, h, w), dtype=dtype)
    cdef real[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t b, ch, y, z
    cdef unsigned char k
    with nogil:
        for b in range(n):
            for ch in range(c):
                for y in range(oh):
                    for z in range(ow):
                        k = arg[b, ch, y, z]
                        dx[b, ch, 2 * y + (k >> 1), 2 * z + (k & 1)] = dout[b, ch, y, z]
    return dx_arr
