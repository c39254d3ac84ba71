"""Pure-numpy kernels: 2-D convolution (stride 1, zero padding) and
2x2 max-pooling, forward and backward.

Same contracts as the compiled versions in `_fast.pyx`; summation order
differs, so cross-backend results agree only to floating-point tolerance.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv2d_forward(x, w, b, pad):
    """x [N,C,H,W], w [F,C,kh,kw], b [F] -> y [N,F,Ho,Wo]."""
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    wins = sliding_window_view(xp, w.shape[2:], axis=(2, 3))
    y = np.einsum("nchwuv,fcuv->nfhw", wins, w, optimize=True)
    return y + b[None, :, None, None]


def conv2d_backward(x, w, dy, pad):
    """Gradients of conv2d_forward: returns (dx, dw, db)."""
    kh, kw = w.shape[2:]
    ho, wo = dy.shape[2:]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    wins = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    dw = np.einsum("nchwuv,nfhw->fcuv", wins, dy, optimize=True)
    db = dy.sum(axis=(0, 2, 3))
    dxp = np.zeros_like(xp)
    for u in range(kh):
        for v in range(kw):
            dxp[:, :, u:u + ho, v:v + wo] += np.einsum(
                "nfhw,fc->nchw", dy, w[:, :, u, v], optimize=True)
    h, wd = x.shape[2:]
    dx = dxp[:, :, pad:pad + h, pad:pad + wd]
    return np.ascontiguousarray(dx), dw, db


def maxpool2_forward(x):
    """x [N,C,H,W] (H, W even) -> (y [N,C,H/2,W/2], idx of winner in {0..3}).

    Winner index encodes the in-window position (di*2 + dj); ties go to the
    first position in (0,0),(0,1),(1,0),(1,1) order.
    """
    n, c, h, w = x.shape
    xr = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    flat = np.ascontiguousarray(xr).reshape(n, c, h // 2, w // 2, 4)
    idx = flat.argmax(axis=4).astype(np.int8)
    y = np.take_along_axis(flat, idx[..., None].astype(np.intp), axis=4)[..., 0]
    return np.ascontiguousarray(y), idx


def maxpool2_backward(dy, idx):
    """Scatter dy back through the pooling windows chosen by idx."""
    n, c, h2, w2 = dy.shape
    flat = np.zeros((n, c, h2, w2, 4), dtype=np.float64)
    np.put_along_axis(flat, idx[..., None].astype(np.intp), dy[..., None], axis=4)
    xr = flat.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(xr).reshape(n, c, h2 * 2, w2 * 2)
