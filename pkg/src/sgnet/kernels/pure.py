"""Numpy fallback kernels.

Bit-compatible with the compiled backend: gathers are exact, and col2im
accumulates contributions in the same (ky, kx) pass order, so both
backends produce identical bytes for identical inputs.
"""

import numpy as np


def conv_out_size(size, k, s, p):
    return (size + 2 * p - k) // s + 1


def im2col(x, kh, kw, sh, sw, ph, pw):
    """Expand (N,C,H,W) into patch rows.

    Returns (N*OH*OW, C*kh*kw); rows ordered (n, oh, ow), columns ordered
    (c, ky, kx).
    """
    n, c, h, w = x.shape
    oh = conv_out_size(h, kh, sh, ph)
    ow = conv_out_size(w, kw, sw, pw)
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    patches = np.empty((n, c, kh, kw, oh, ow), dtype=x.dtype)
    for ky in range(kh):
        for kx in range(kw):
            patches[:, :, ky, kx] = x[:, :, ky : ky + sh * oh : sh, kx : kx + sw * ow : sw]
    return patches.transpose(0, 4, 5, 1, 2, 3).reshape(n * oh * ow, c * kh * kw)


def col2im(cols, shape, kh, kw, sh, sw, ph, pw):
    """Scatter-add patch rows back to an (N,C,H,W) image (adjoint of im2col)."""
    n, c, h, w = shape
    oh = conv_out_size(h, kh, sh, ph)
    ow = conv_out_size(w, kw, sw, pw)
    patches = cols.reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    img = np.zeros((n, c, h + 2 * ph, w + 2 * pw), dtype=cols.dtype)
    for ky in range(kh):
        for kx in range(kw):
            img[:, :, ky : ky + sh * oh : sh, kx : kx + sw * ow : sw] += patches[:, :, ky, kx]
    if ph or pw:
        img = img[:, :, ph : ph + h, pw : pw + w]
    return np.ascontiguousarray(img)


def maxpool2x2_forward(x):
    """2x2/2 max pooling. Returns (pooled, argmax) with argmax in 0..3
    (row-major within the window, first maximum wins)."""
    n, c, h, w = x.shape
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = np.ascontiguousarray(win).reshape(n, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1).astype(np.uint8)
    out = np.take_along_axis(win, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return out, idx


def maxpool2x2_backward(grad, idx):
    """Route pooled gradients back to the argmax positions."""
    n, c, oh, ow = grad.shape
    dwin = np.zeros((n, c, oh, ow, 4), dtype=grad.dtype)
    np.put_along_axis(dwin, idx[..., None].astype(np.intp), grad[..., None], axis=-1)
    dx = dwin.reshape(n, c, oh, ow, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(dx).reshape(n, c, 2 * oh, 2 * ow)
