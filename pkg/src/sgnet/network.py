"""Stacked encoder-decoder network for heatmap regression.

Input flows through a stem that drops resolution 4x, then through S
hourglass stacks. Each stack encodes through 4 gated blocks with 2x2
pooling between them, crosses a bottleneck block, and decodes back up
through 4 more gated blocks, merging an encoder skip at every scale.
Every stack emits its own K-channel heatmap tensor through a 1x1 head;
all S tensors are returned so training can supervise each one.

Between consecutive stacks the features and heatmaps are remapped with
1x1 convolutions and added back onto the stack's input, so later stacks
refine earlier predictions.

Merge modes for (skip, upsampled) pairs at each decoder scale:

- ``sum``: elementwise add, no parameters.
- ``concat_conv``: concat to 2N then a full 3x3 conv back to N.
- ``concat_grouped``: same but groups=2, so output channels [0, N/2)
  see only the encoder skip and [N/2, N) only the decoder signal.

Skip channels come first in the concat; that ordering is part of the
grouped merge contract.
"""

from dataclasses import dataclass

import numpy as np

from . import ops
from .blocks import GATE_MODES, GatedBlock
from .errors import ConfigurationError, UsageError
from .layers import BatchNorm2d, Conv2d, Layer, LayerList

AGGREGATION_MODES = ("sum", "concat_conv", "concat_grouped")
DEPTH = 4  # pooling levels per stack; input_size must carry 4 + DEPTH halvings


@dataclass(frozen=True)
class NetworkConfig:
    stacks: int = 2
    width: int = 128
    keypoints: int = 16
    in_channels: int = 3
    input_size: int = 256
    gate_mode: str = "learnable_per_channel"
    gate_fixed_value: float = 1.0
    aggregation: str = "concat_conv"
    dtype: str = "float64"

    def __post_init__(self):
        if self.stacks < 1:
            raise ConfigurationError(f"stacks must be >= 1, got {self.stacks}")
        if self.width < 4 or self.width % 4:
            raise ConfigurationError(f"width must be a positive multiple of 4, got {self.width}")
        if self.keypoints < 1:
            raise ConfigurationError(f"keypoints must be >= 1, got {self.keypoints}")
        if self.in_channels < 1:
            raise ConfigurationError(f"in_channels must be >= 1, got {self.in_channels}")
        step = 4 * 2 ** DEPTH
        if self.input_size < step or self.input_size % step:
            raise ConfigurationError(
                f"input_size must be a positive multiple of {step}, got {self.input_size}"
            )
        if self.gate_mode not in GATE_MODES:
            raise ConfigurationError(f"gate_mode {self.gate_mode!r} not in {GATE_MODES}")
        if self.aggregation not in AGGREGATION_MODES:
            raise ConfigurationError(
                f"aggregation {self.aggregation!r} not in {AGGREGATION_MODES}"
            )
        if self.dtype not in ("float32", "float64"):
            raise ConfigurationError(f"dtype must be float32 or float64, got {self.dtype!r}")

    @property
    def heatmap_size(self):
        return self.input_size // 4

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32


class SkipTransform(Layer):
    """BN -> ReLU -> 1x1 conv applied to each encoder tap."""

    def __init__(self, channels, dtype=np.float64):
        super().__init__()
        self.bn = self.add_child("bn", BatchNorm2d(channels, dtype=dtype))
        spec = ops.ConvSpec(channels, channels, kernel=1)
        self.conv = self.add_child("conv", Conv2d(spec, bias=True, dtype=dtype))

    def forward(self, x):
        return self.conv(ops.relu(self.bn(x)))


class MergeLayer(Layer):
    def __init__(self, channels, mode, dtype=np.float64):
        super().__init__()
        self.mode = mode
        if mode == "sum":
            self.conv = None
        elif mode in ("concat_conv", "concat_grouped"):
            groups = 2 if mode == "concat_grouped" else 1
            spec = ops.ConvSpec(2 * channels, channels, kernel=3, padding=1, groups=groups)
            self.conv = self.add_child("conv", Conv2d(spec, bias=True, dtype=dtype))
        else:
            raise ConfigurationError(f"unknown aggregation mode {mode!r}")

    def forward(self, skip, up):
        if self.mode == "sum":
            return ops.add(skip, up)
        return self.conv(ops.concat_channels((skip, up)))


class Stem(Layer):
    """7x7/2 conv then two gated blocks around a 2x2 pool; 4x downsample.

    The downsampling conv sees a hand-padded input (3 before, 2 after on
    each axis) so the stride-2 window tiling is exact on even sizes and
    the output is precisely input_size/2.
    """

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        dtype = cfg.np_dtype
        spec = ops.ConvSpec(cfg.in_channels, cfg.width, kernel=7, stride=2, padding=0)
        self.conv = self.add_child("conv", Conv2d(spec, bias=True, dtype=dtype))
        self.block1 = self.add_child("block1", GatedBlock(
            cfg.width, cfg.gate_mode, cfg.gate_fixed_value, dtype))
        self.block2 = self.add_child("block2", GatedBlock(
            cfg.width, cfg.gate_mode, cfg.gate_fixed_value, dtype))

    def forward(self, x):
        x = self.conv(ops.pad2d(x, 3, 2, 3, 2))
        x = self.block1(x)
        return self.block2(ops.maxpool2x2(x))


class Stack(Layer):
    """One hourglass: encode with skips, bottleneck, decode with merges."""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        dtype = cfg.np_dtype

        def block():
            return GatedBlock(cfg.width, cfg.gate_mode, cfg.gate_fixed_value, dtype)

        self.encoders = self.add_child("encoders", LayerList(block() for _ in range(DEPTH)))
        self.skips = self.add_child("skips", LayerList(
            SkipTransform(cfg.width, dtype) for _ in range(DEPTH)))
        self.bottleneck = self.add_child("bottleneck", block())
        self.decoders = self.add_child("decoders", LayerList(block() for _ in range(DEPTH)))
        self.merges = self.add_child("merges", LayerList(
            MergeLayer(cfg.width, cfg.aggregation, dtype) for _ in range(DEPTH)))

    def forward(self, x):
        skips = []
        cur = x
        for encoder, skip in zip(self.encoders, self.skips):
            cur = encoder(cur)
            skips.append(skip(cur))
            cur = ops.maxpool2x2(cur)
        cur = self.bottleneck(cur)
        for level in reversed(range(DEPTH)):
            cur = ops.upsample_nearest2x(cur)
            cur = self.merges[level](skips[level], cur)
            cur = self.decoders[level](cur)
        return cur


class Network(Layer):
    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        dtype = cfg.np_dtype
        self.stem = self.add_child("stem", Stem(cfg))
        self.stacks = self.add_child("stacks", LayerList(
            Stack(cfg) for _ in range(cfg.stacks)))
        head_spec = ops.ConvSpec(cfg.width, cfg.keypoints, kernel=1)
        self.heads = self.add_child("heads", LayerList(
            Conv2d(head_spec, bias=True, dtype=dtype) for _ in range(cfg.stacks)))
        feat_spec = ops.ConvSpec(cfg.width, cfg.width, kernel=1)
        heat_spec = ops.ConvSpec(cfg.keypoints, cfg.width, kernel=1)
        self.feat_remaps = self.add_child("feat_remaps", LayerList(
            Conv2d(feat_spec, bias=True, dtype=dtype) for _ in range(cfg.stacks - 1)))
        self.heat_remaps = self.add_child("heat_remaps", LayerList(
            Conv2d(heat_spec, bias=True, dtype=dtype) for _ in range(cfg.stacks - 1)))

    def forward(self, x):
        """Returns one (N,K,R,R) heatmap tensor per stack, R = input_size/4."""
        if x.ndim != 4 or x.shape[1] != self.cfg.in_channels:
            raise UsageError(f"expected (N,{self.cfg.in_channels},H,W) input, got {x.shape}")
        if x.shape[2] != self.cfg.input_size or x.shape[3] != self.cfg.input_size:
            raise ConfigurationError(
                f"network built for {self.cfg.input_size}x{self.cfg.input_size} inputs, "
                f"got {x.shape[2]}x{x.shape[3]}"
            )
        if x.dtype != self.cfg.np_dtype:
            raise UsageError(f"input dtype {x.dtype} != network dtype {self.cfg.dtype}")
        cur = self.stem(x)
        outputs = []
        for idx, (stack, head) in enumerate(zip(self.stacks, self.heads)):
            features = stack(cur)
            heatmaps = head(features)
            outputs.append(heatmaps)
            if idx + 1 < self.cfg.stacks:
                cur = ops.add(features, ops.add(self.feat_remaps[idx](features),
                                                self.heat_remaps[idx](heatmaps)))
        return outputs

    def gated_blocks(self):
        """(dotted name, block) pairs in forward order."""
        found = []

        def walk(layer, prefix):
            if isinstance(layer, GatedBlock):
                found.append((prefix.rstrip("."), layer))
                return
            for name, child in layer._children.items():
                walk(child, prefix + name + ".")

        walk(self, "")
        return found

    def alpha_snapshot(self):
        """Gate values per block: [{'block', 'mode', 'values'}, ...]."""
        return [
            {"block": name, "mode": block.gate.mode, "values": block.gate_values()}
            for name, block in self.gated_blocks()
        ]


def build(cfg: NetworkConfig, seed: int = 0) -> Network:
    """Construct and initialize a network deterministically from a seed."""
    from .training import init_network

    net = Network(cfg)
    init_network(net, np.random.default_rng(seed))
    return net
