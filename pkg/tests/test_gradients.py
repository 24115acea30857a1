"""Finite-difference gradient checks: every differentiable op and the full
gated block, 20 random shapes each, relative tolerance 1e-4 in float64.
"""

import numpy as np
import pytest

from helpers import away_from_zero, gradcheck, layer_gradcheck, random_nchw, spread_values
from sgnet import ops
from sgnet.blocks import GATE_MODES, GatedBlock
from sgnet.tensor import Tensor
from sgnet.training import init_network

SEEDS = range(20)


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_conv2d(seed):
    rng = np.random.default_rng(seed)
    groups = int(rng.choice([1, 1, 2]))
    cin = groups * int(rng.integers(1, 3))
    cout = groups * int(rng.integers(1, 3))
    k = int(rng.integers(1, 4))
    s = int(rng.integers(1, 3))
    p = int(rng.integers(0, 2))
    oh = int(rng.integers(1, 4))
    ow = int(rng.integers(1, 4))
    h = (oh - 1) * s + k - 2 * p
    w = (ow - 1) * s + k - 2 * p
    if h < 1 or w < 1:
        p = 0
        h = (oh - 1) * s + k
        w = (ow - 1) * s + k
    n = int(rng.integers(1, 4))
    spec = ops.ConvSpec(cin, cout, k, s, p, groups)
    x = rng.standard_normal((n, cin, h, w))
    wgt = rng.standard_normal(spec.weight_shape)
    if rng.random() < 0.5:
        bias = rng.standard_normal(cout)
        gradcheck(lambda a, b, c: ops.conv2d(a, b, c, spec), [x, wgt, bias], rng)
    else:
        gradcheck(lambda a, b: ops.conv2d(a, b, None, spec), [x, wgt], rng)


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_batchnorm_train(seed):
    rng = np.random.default_rng(100 + seed)
    n, c, h, w = random_nchw(rng)
    if n * h * w < 2:
        n += 1
    x = rng.standard_normal((n, c, h, w))
    gamma = rng.standard_normal(c)
    beta = rng.standard_normal(c)

    def build(xt, gt, bt):
        return ops.batchnorm2d(xt, gt, bt, np.zeros(c), np.ones(c), training=True)

    gradcheck(build, [x, gamma, beta], rng)


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_batchnorm_eval(seed):
    rng = np.random.default_rng(200 + seed)
    n, c, h, w = random_nchw(rng)
    x = rng.standard_normal((n, c, h, w))
    gamma = rng.standard_normal(c)
    beta = rng.standard_normal(c)
    rm = rng.standard_normal(c)
    rv = rng.uniform(0.5, 2.0, c)

    def build(xt, gt, bt):
        return ops.batchnorm2d(xt, gt, bt, rm, rv, training=False)

    gradcheck(build, [x, gamma, beta], rng)


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_relu(seed):
    rng = np.random.default_rng(300 + seed)
    x = away_from_zero(rng.standard_normal(random_nchw(rng)))
    gradcheck(ops.relu, [x], rng)


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_maxpool(seed):
    rng = np.random.default_rng(400 + seed)
    n, c, h, w = random_nchw(rng)
    x = rng.uniform(-1, 1, (n, c, 2 * h, 2 * w))
    x = spread_values(x, rng)
    gradcheck(ops.maxpool2x2, [x], rng)


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_pad2d(seed):
    rng = np.random.default_rng(500 + seed)
    x = rng.standard_normal(random_nchw(rng))
    t, b, l, r = (int(v) for v in rng.integers(0, 3, 4))
    gradcheck(lambda xt: ops.pad2d(xt, t, b, l, r), [x], rng)


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_upsample(seed):
    rng = np.random.default_rng(600 + seed)
    x = rng.standard_normal(random_nchw(rng))
    gradcheck(ops.upsample_nearest2x, [x], rng)


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_concat(seed):
    rng = np.random.default_rng(700 + seed)
    n, _, h, w = random_nchw(rng)
    parts = [rng.standard_normal((n, int(rng.integers(1, 4)), h, w))
             for _ in range(int(rng.integers(2, 4)))]
    gradcheck(lambda *ts: ops.concat_channels(ts), parts, rng)


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("op", [ops.add, ops.sub, ops.mul])
def test_grad_elementwise(seed, op):
    rng = np.random.default_rng(800 + seed)
    shape = random_nchw(rng)
    gradcheck(op, [rng.standard_normal(shape), rng.standard_normal(shape)], rng)


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("strict", [False, True])
def test_grad_sigmoid(seed, strict):
    rng = np.random.default_rng(900 + seed)
    x = rng.uniform(-3, 3, random_nchw(rng))
    gradcheck(lambda xt: ops.sigmoid(xt, strict_open=strict), [x], rng)


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_scale_channels(seed):
    rng = np.random.default_rng(1000 + seed)
    n, c, h, w = random_nchw(rng)
    x = rng.standard_normal((n, c, h, w))
    alpha = rng.standard_normal(c if seed % 2 else 1)
    gradcheck(ops.scale_channels, [x, alpha], rng)


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_scale_and_sum(seed):
    rng = np.random.default_rng(1100 + seed)
    x = rng.standard_normal(random_nchw(rng))
    factor = float(rng.uniform(-2, 2))
    gradcheck(lambda xt: ops.scale(xt, factor), [x], rng)
    gradcheck(ops.sum_all, [x], rng)


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_full_gated_block(seed):
    # params and input of the complete soft-gated residual block
    rng = np.random.default_rng(1200 + seed)
    width = int(rng.choice([4, 8]))
    mode = GATE_MODES[seed % len(GATE_MODES)]
    block = GatedBlock(width, gate_mode=mode, fixed_value=0.5)
    init_network(block, rng)
    # move alphas and BN betas off 0: zero betas leave relu probes sitting
    # exactly on the kink whenever a receptive field is all-negative
    for _, p in block.named_params():
        if p.ndim == 1:
            p.data[...] = rng.uniform(-0.5, 0.5, p.shape)
    n = int(rng.integers(2, 4))
    h = int(rng.integers(2, 5))
    w = int(rng.integers(2, 5))
    x = rng.standard_normal((n, width, h, w))
    layer_gradcheck(block, x, rng, training=True)


def test_grad_block_eval_mode():
    rng = np.random.default_rng(77)
    block = GatedBlock(4, gate_mode="learnable_per_channel")
    init_network(block, rng)
    for _, p in block.named_params():
        if p.ndim == 1:
            p.data[...] = rng.uniform(-0.5, 0.5, p.shape)
    for _, buf in block.named_buffers():
        if buf.size:
            buf[...] = rng.uniform(0.8, 1.2, buf.shape)
    x = rng.standard_normal((2, 4, 3, 3))
    layer_gradcheck(block, x, rng, training=False)
