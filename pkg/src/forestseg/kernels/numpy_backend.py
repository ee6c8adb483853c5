"""Pure-NumPy fallback for the compiled kernels.

Used automatically when the Cython extension is unavailable, and kept
behaviourally identical so the two backends are interchangeable (the pooling
argmax breaks ties toward the first row-major window position in both).
"""

import numpy as np


def im2col(x, kh, kw, stride, pad):
    n, c, h, w = x.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, oh, ow, c, kh, kw), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, :, i, j] = x[
                :, :, i : i + oh * stride : stride, j : j + ow * stride : stride
            ].transpose(0, 2, 3, 1)
    return np.ascontiguousarray(cols.reshape(n, oh * ow, c * kh * kw))


def col2im(cols, h, w, kh, kw, stride, pad):
    n = cols.shape[0]
    c = cols.shape[2] // (kh * kw)
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    dx = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    cols = cols.reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
    for i in range(kh):
        for j in range(kw):
            # Within one (i, j) tap the target slices never self-overlap,
            # so a strided += is a correct scatter-add.
            dx[:, :, i : i + oh * stride : stride, j : j + ow * stride : stride] += cols[
                :, :, :, :, i, j
            ]
    if pad:
        dx = dx[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(dx)


def maxpool2x2(x):
    n, c, h, w = x.shape
    windows = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    windows = windows.reshape(n, c, h // 2, w // 2, 4)
    arg = windows.argmax(axis=-1).astype(np.uint8)
    out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), arg


def maxpool2x2_backward(dout, arg, h, w):
    n, c, oh, ow = dout.shape
    scattered = np.zeros((n, c, oh, ow, 4), dtype=dout.dtype)
    np.put_along_axis(scattered, arg[..., None], dout[..., None], axis=-1)
    dx = scattered.reshape(n, c, oh, ow, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(dx.reshape(n, c, h, w))
