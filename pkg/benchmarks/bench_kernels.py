"""Compare the compiled kernel backend against the numpy fallback.

Times the four hot kernels (im2col, col2im, maxpool forward/backward) on
convnet-typical shapes, checks both backends return identical bytes, then
optionally times a full forward/backward pass per backend in subprocesses
(backend selection happens at import, so in-process swapping is not enough
for the end-to-end number).

Usage:
    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --repeats 20 --end-to-end
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from sgnet.kernels import pure

try:
    from sgnet.kernels import _fast
except ImportError:
    _fast = None

# (label, batch, channels, height, kernel, stride, pad) spanning the shapes
# the network actually hits: the 7x7/2 stem, 3x3 trunk convs, 1x1 heads.
CASES = [
    ("stem 7x7/2", 8, 3, 64, 7, 2, 3),
    ("trunk 3x3 16px", 8, 32, 16, 3, 1, 1),
    ("trunk 3x3 4px", 8, 128, 4, 3, 1, 1),
    ("head 1x1 16px", 8, 64, 16, 1, 1, 0),
]


def _time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_case(label, n, c, h, k, s, p, repeats, rng):
    x = np.ascontiguousarray(rng.standard_normal((n, c, h, h)))
    oh = pure.conv_out_size(h, k, s, p)
    cols_pure = pure.im2col(x, k, k, s, s, p, p)
    rows = []

    def add(name, pure_fn, fast_fn, check):
        t_pure = _time(pure_fn, repeats)
        if _fast is None:
            rows.append((f"{label} {name}", t_pure, None))
            return
        t_fast = _time(fast_fn, repeats)
        a, b = check()
        if a.tobytes() != b.tobytes():
            raise AssertionError(f"{label} {name}: backends disagree")
        rows.append((f"{label} {name}", t_pure, t_fast))

    add(
        "im2col",
        lambda: pure.im2col(x, k, k, s, s, p, p),
        lambda: _fast.im2col(x, k, k, s, s, p, p),
        lambda: (cols_pure, _fast.im2col(x, k, k, s, s, p, p)),
    )
    add(
        "col2im",
        lambda: pure.col2im(cols_pure, x.shape, k, k, s, s, p, p),
        lambda: _fast.col2im(cols_pure, x.shape, k, k, s, s, p, p),
        lambda: (
            pure.col2im(cols_pure, x.shape, k, k, s, s, p, p),
            _fast.col2im(cols_pure, x.shape, k, k, s, s, p, p),
        ),
    )
    if h % 2 == 0:
        out_pure, idx_pure = pure.maxpool2x2_forward(x)
        g = np.ascontiguousarray(rng.standard_normal(out_pure.shape))
        add(
            "pool fwd",
            lambda: pure.maxpool2x2_forward(x),
            lambda: _fast.maxpool2x2_forward(x),
            lambda: (out_pure, _fast.maxpool2x2_forward(x)[0]),
        )
        add(
            "pool bwd",
            lambda: pure.maxpool2x2_backward(g, idx_pure),
            lambda: _fast.maxpool2x2_backward(g, idx_pure),
            lambda: (
                pure.maxpool2x2_backward(g, idx_pure),
                _fast.maxpool2x2_backward(g, idx_pure),
            ),
        )
    return rows


_E2E_SNIPPET = """
import time
import numpy as np
from sgnet import kernels, ops
from sgnet.network import NetworkConfig, build
from sgnet.tensor import Tape, Tensor
from sgnet.training import mse_heatmap_loss

net = build(NetworkConfig(stacks=2, width=32, keypoints=4, input_size=64), seed=0)
rng = np.random.default_rng(0)
x = Tensor(rng.standard_normal((4, 3, 64, 64)))
gt = Tensor(rng.standard_normal((4, 4, 16, 16)))
best = float("inf")
for _ in range(5):
    t0 = time.perf_counter()
    with Tape() as tape:
        loss = None
        for pred in net.forward(x):
            term = mse_heatmap_loss(pred, gt)
            loss = term if loss is None else ops.add(loss, term)
        tape.backward(loss)
    best = min(best, time.perf_counter() - t0)
print(f"{kernels.BACKEND}: {best * 1e3:.1f} ms per fwd+bwd")
"""


def bench_end_to_end():
    for backend in ("pure", "compiled"):
        if backend == "compiled" and _fast is None:
            print("compiled: extension not built, skipped")
            continue
        env = dict(os.environ, SGNET_KERNELS=backend)
        out = subprocess.run(
            [sys.executable, "-c", _E2E_SNIPPET], env=env, capture_output=True, text=True
        )
        if out.returncode != 0:
            raise RuntimeError(out.stderr)
        print("  " + out.stdout.strip())


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=10, help="timing repeats, best-of")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument(
        "--end-to-end",
        action="store_true",
        help="also time a 2-stack forward/backward per backend",
    )
    args = parser.parse_args(argv)

    if _fast is None:
        print("note: compiled extension unavailable, timing pure backend only")
    rng = np.random.default_rng(args.seed)
    rows = []
    for case in CASES:
        rows.extend(bench_case(*case, repeats=args.repeats, rng=rng))

    width = max(len(r[0]) for r in rows)
    print(f"{'kernel':<{width}}  {'pure':>9}  {'compiled':>9}  {'speedup':>7}")
    for name, t_pure, t_fast in rows:
        if t_fast is None:
            print(f"{name:<{width}}  {t_pure * 1e3:>7.2f}ms  {'-':>9}  {'-':>7}")
        else:
            print(
                f"{name:<{width}}  {t_pure * 1e3:>7.2f}ms  {t_fast * 1e3:>7.2f}ms"
                f"  {t_pure / t_fast:>6.1f}x"
            )
    print("all kernel outputs byte-identical across backends")

    if args.end_to_end:
        print("\nend-to-end (2-stack width-32, batch 4):")
        bench_end_to_end()


if __name__ == "__main__":
    main()
