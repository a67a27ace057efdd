"""Pure numpy 3x3 / pad-1 convolution kernels (fallback for the compiled core)."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _im2col(x):
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))  # (n, c, h, w, 3, 3)
    return np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(n, c * 9, h * w)


def conv3x3_forward(x, w, bias):
    n, c, h, wd = x.shape
    o = w.shape[0]
    cols = _im2col(x)
    out = np.matmul(w.reshape(o, c * 9), cols)
    out += bias[None, :, None]
    return out.reshape(n, o, h, wd)


def conv3x3_backward(grad_out, x, w, need_input=True):
    n, c, h, wd = x.shape
    o = w.shape[0]
    go = grad_out.reshape(n, o, h * wd)
    gb = go.sum(axis=(0, 2))
    cols = _im2col(x)
    gw = np.zeros((o, c * 9), dtype=x.dtype)
    for b in range(n):
        gw += go[b] @ cols[b].T
    gx = None
    if need_input:
        gcol = np.matmul(w.reshape(o, c * 9).T, go).reshape(n, c, 3, 3, h, wd)
        gxp = np.zeros((n, c, h + 2, wd + 2), dtype=x.dtype)
        for dy in range(3):
            for dx in range(3):
                gxp[:, :, dy:dy + h, dx:dx + wd] += gcol[:, :, dy, dx]
        gx = np.ascontiguousarray(gxp[:, :, 1:-1, 1:-1])
    return gx, gw.reshape(w.shape), gb
