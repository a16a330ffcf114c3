"""Pure numpy versions of the compiled kernels in ``_ckernels.pyx``."""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(xp, k, stride):
    B, C, Hp, Wp = xp.shape
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    Ho, Wo = win.shape[2], win.shape[3]
    # (B, C, Ho, Wo, k, k) -> (B, C, k, k, Ho, Wo)
    return np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(B, C * k * k, Ho * Wo)


def col2im(cols, C, Hp, Wp, k, stride):
    B = cols.shape[0]
    Ho = (Hp - k) // stride + 1
    Wo = (Wp - k) // stride + 1
    cols = cols.reshape(B, C, k, k, Ho, Wo)
    out = np.zeros((B, C, Hp, Wp), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += cols[:, :, i, j]
    return out


def haar_analysis(x):
    a = x[:, 0::2, 0::2]
    b = x[:, 0::2, 1::2]
    c = x[:, 1::2, 0::2]
    d = x[:, 1::2, 1::2]
    return np.stack([a + b + c + d, a - b + c - d, a + b - c - d, a - b - c + d]) * x.dtype.type(0.5)


def haar_synthesis(s):
    ll, hl, lh, hh = s
    N, h, w = ll.shape
    half = s.dtype.type(0.5)
    x = np.empty((N, 2 * h, 2 * w), dtype=s.dtype)
    x[:, 0::2, 0::2] = (ll + hl + lh + hh) * half
    x[:, 0::2, 1::2] = (ll - hl + lh - hh) * half
    x[:, 1::2, 0::2] = (ll + hl - lh - hh) * half
    x[:, 1::2, 1::2] = (ll - hl - lh + hh) * half
    return x
