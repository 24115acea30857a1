"""Direct-loop reference implementations.

Independent of the im2col fast path; tests use these as the correctness
oracle for convolution and pooling. Deliberately written as plain nested
loops -- slow, only suitable for small shapes.
"""

import numpy as np


def conv2d_direct(x, w, b, stride, padding, groups=1):
    """Naive grouped convolution forward, (N,C,H,W) in, (N,O,OH,OW) out."""
    n, c, h, wid = x.shape
    o, cg, kh, kw = w.shape
    sh, sw = stride
    ph, pw = padding
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (wid + 2 * pw - kw) // sw + 1
    og = o // groups
    out = np.zeros((n, o, oh, ow), dtype=x.dtype)
    for bi in range(n):
        for oc in range(o):
            g = oc // og
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for ic in range(cg):
                        for ky in range(kh):
                            hh = i * sh + ky - ph
                            if hh < 0 or hh >= h:
                                continue
                            for kx in range(kw):
                                ww = j * sw + kx - pw
                                if ww < 0 or ww >= wid:
                                    continue
                                acc += x[bi, g * cg + ic, hh, ww] * w[oc, ic, ky, kx]
                    out[bi, oc, i, j] = acc
            if b is not None:
                out[bi, oc] += b[oc]
    return out


def maxpool2x2_direct(x):
    n, c, h, w = x.shape
    out = np.empty((n, c, h // 2, w // 2), dtype=x.dtype)
    for bi in range(n):
        for ci in range(c):
            for i in range(h // 2):
                for j in range(w // 2):
                    out[bi, ci, i, j] = max(
                        x[bi, ci, 2 * i, 2 * j],
                        x[bi, ci, 2 * i, 2 * j + 1],
                        x[bi, ci, 2 * i + 1, 2 * j],
                        x[bi, ci, 2 * i + 1, 2 * j + 1],
                    )
    return out
