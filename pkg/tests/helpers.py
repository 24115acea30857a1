"""Shared test machinery: finite-difference gradient checks and shape draws."""

import numpy as np

from sgnet import ops
from sgnet.tensor import Tape, Tensor


def relative_error(a, b, floor=1e-8):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    num = np.linalg.norm((a - b).ravel())
    den = max(np.linalg.norm(a.ravel()), np.linalg.norm(b.ravel()), floor)
    return num / den


def away_from_zero(x, margin=0.05):
    """Shift every element at least `margin` from 0 (relu-kink safety)."""
    sign = np.where(x >= 0, 1.0, -1.0)
    return x + sign * margin


def spread_values(x, rng, min_gap=1e-3):
    """Separate each 2x2 pooling window's max from its runner-up.

    A finite-difference probe of +-h can only flip a window argmax when the
    top two values there are within 2h; bumping near-tied maxima by min_gap
    keeps every probe on one side of the kink.
    """
    n, c, h, w = x.shape
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = np.ascontiguousarray(win).reshape(n, c, h // 2, w // 2, 4)
    srt = np.sort(win, axis=-1)
    bump = np.where(srt[..., 3] - srt[..., 2] < min_gap, min_gap, 0.0)
    idx = win.argmax(axis=-1)[..., None]
    np.put_along_axis(win, idx, np.take_along_axis(win, idx, -1) + bump[..., None], -1)
    back = win.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(back).reshape(n, c, h, w)


def numeric_grad(scalar_fn, arrays, wrt, h=1e-5):
    """Central finite differences of scalar_fn(arrays) w.r.t. arrays[wrt]."""
    work = [a.copy() for a in arrays]
    target = work[wrt]
    grad = np.zeros_like(target)
    flat, gflat = target.ravel(), grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = scalar_fn(work)
        flat[i] = orig - h
        fm = scalar_fn(work)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def gradcheck(build_out, arrays, rng, tol=1e-4, h=1e-5, skip=()):
    """Check analytic grads of build_out(*tensors) against finite differences.

    build_out receives one Tensor per input array and returns an output
    Tensor of any shape; the scalar objective is a fixed random projection
    of that output so every output element carries a distinct weight.
    Inputs listed in `skip` (by index) are not differentiated.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    with Tape() as tape:
        out = build_out(*tensors)
        proj = Tensor(rng.standard_normal(out.shape))
        loss = ops.sum_all(ops.mul(out, proj))
        tape.backward(loss)

    def scalar_fn(work):
        outs = build_out(*[Tensor(a) for a in work])
        return float(np.sum(outs.data * proj.data))

    errors = {}
    for idx in range(len(arrays)):
        if idx in skip:
            continue
        analytic = tensors[idx].grad
        assert analytic is not None, f"input {idx} received no gradient"
        numeric = numeric_grad(scalar_fn, arrays, idx, h=h)
        err = relative_error(analytic, numeric)
        errors[idx] = err
        assert err < tol, (
            f"input {idx}: relative error {err:.3e} >= {tol:.0e} "
            f"(shape {arrays[idx].shape})"
        )
    return errors


def random_nchw(rng, c=None, lo=1, hi=5):
    """Random 4-d shape with each dim in [lo, hi]; channel override allowed."""
    n = int(rng.integers(lo, hi + 1))
    ch = c if c is not None else int(rng.integers(lo, hi + 1))
    h = int(rng.integers(lo, hi + 1))
    w = int(rng.integers(lo, hi + 1))
    return (n, ch, h, w)


def layer_gradcheck(layer, x_data, rng, tol=1e-4, h=1e-5, training=True):
    """Finite-difference check of a Layer's input and every parameter.

    Train-mode BN mutates running stats on each probe forward, but those
    stats never feed the train-mode output, so the replays stay valid.
    """
    x_data = np.asarray(x_data, dtype=np.float64)
    layer.train(training)
    layer.zero_grad()
    x = Tensor(x_data, requires_grad=True)
    with Tape() as tape:
        out = layer(x)
        proj = Tensor(rng.standard_normal(out.shape))
        tape.backward(ops.sum_all(ops.mul(out, proj)))

    def objective(probe_x):
        return float(np.sum(layer(Tensor(probe_x)).data * proj.data))

    num = numeric_grad(lambda work: objective(work[0]), [x_data], 0, h=h)
    err = relative_error(x.grad, num)
    assert err < tol, f"input: relative error {err:.3e} (shape {x_data.shape})"

    for name, param in layer.named_params():
        assert param.grad is not None, f"{name} received no gradient"
        analytic = param.grad.copy()
        numeric = np.zeros_like(param.data)
        flat, nflat = param.data.ravel(), numeric.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = objective(x_data)
            flat[i] = orig - h
            fm = objective(x_data)
            flat[i] = orig
            nflat[i] = (fp - fm) / (2.0 * h)
        err = relative_error(analytic, numeric)
        assert err < tol, f"{name}: relative error {err:.3e}"
