"""Pure-numpy circular im2col / col2im on channels-last arrays.

Used when the compiled extension is unavailable or disabled.
"""

import numpy as np


def _wrap_index(n, taps):
    half = taps // 2
    return (np.arange(n)[:, None] + np.arange(taps)[None, :] - half) % n


def im2col(x, kh, kw):
    """Gather (B, M, K, C) into cyclic patches of shape (B, M, K, kh, kw, C)."""
    _, M, K, _ = x.shape
    rows = _wrap_index(M, kh)[:, :, None, None]
    cols = _wrap_index(K, kw)[None, None, :, :]
    patches = x[:, rows, cols, :]  # (B, M, kh, K, kw, C)
    return np.ascontiguousarray(patches.transpose(0, 1, 3, 2, 4, 5))


def col2im(cols):
    """Adjoint of :func:`im2col`: sum patches back onto the (B, M, K, C) grid."""
    B, M, K, kh, kw, C = cols.shape
    ph, pw = kh // 2, kw // 2
    out = np.zeros((B, M, K, C), dtype=cols.dtype)
    for a in range(kh):
        for e in range(kw):
            out += np.roll(cols[:, :, :, a, e, :], shift=(a - ph, e - pw), axis=(1, 2))
    return out
