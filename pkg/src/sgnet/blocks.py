"""Gated residual blocks.

A block computes ``gate(x) + branch(x)``: the skip path is scaled by a
gate and added to a convolutional branch. Gate flavors:

- ``fixed``: constant scalar, never trained (1.0 reproduces the plain
  residual block; 0.5 and 0.1 are the attenuated variants).
- ``learnable_scalar``: one trainable scalar shared by all channels.
- ``learnable_per_channel``: one trainable scalar per channel.
- ``hard_sigmoid``: input-dependent per-pixel gate sigmoid(conv1x1(x)),
  kept strictly inside (0,1).

Learnable gates start at exactly 0, so a freshly built block is
numerically identical to its branch and training opens the skip path only
where it helps.

The branch is a three-stage funnel: each stage is BN -> ReLU -> 3x3 conv
(no bias), producing N/2, N/4 and N/4 channels off the running signal;
the three outputs concatenate back to N channels.
"""

import numpy as np

from . import ops
from .errors import ConfigurationError
from .layers import BatchNorm2d, Conv2d, Layer
from .tensor import Tensor

GATE_MODES = ("fixed", "learnable_scalar", "learnable_per_channel", "hard_sigmoid")


class FixedGate(Layer):
    mode = "fixed"

    def __init__(self, channels, value=1.0, dtype=np.float64):
        super().__init__()
        self.value = float(value)
        self.alpha = self.add_buffer("alpha", np.full(1, self.value), dtype)
        self._alpha_tensor = Tensor(self.alpha, requires_grad=False)

    def forward(self, x):
        return ops.scale_channels(x, self._alpha_tensor)

    def gate_values(self):
        return self.alpha.copy()


class LearnableScalarGate(Layer):
    mode = "learnable_scalar"

    def __init__(self, channels, dtype=np.float64):
        super().__init__()
        self.alpha = self.add_param("alpha", np.zeros(1), dtype)

    def forward(self, x):
        return ops.scale_channels(x, self.alpha)

    def gate_values(self):
        return self.alpha.data.copy()


class LearnablePerChannelGate(Layer):
    mode = "learnable_per_channel"

    def __init__(self, channels, dtype=np.float64):
        super().__init__()
        self.alpha = self.add_param("alpha", np.zeros(channels), dtype)

    def forward(self, x):
        return ops.scale_channels(x, self.alpha)

    def gate_values(self):
        return self.alpha.data.copy()


class HardSigmoidGate(Layer):
    mode = "hard_sigmoid"

    def __init__(self, channels, dtype=np.float64):
        super().__init__()
        spec = ops.ConvSpec(channels, channels, kernel=1)
        self.conv = self.add_child("conv", Conv2d(spec, bias=True, dtype=dtype))

    def forward(self, x):
        gate = ops.sigmoid(self.conv(x), strict_open=True)
        return ops.mul(gate, x)

    def gate_values(self):
        # input-dependent gate; the zero-activation operating point is
        # sigmoid(bias), the closest static analogue of alpha
        return 1.0 / (1.0 + np.exp(-self.conv.bias.data))


def make_gate(channels, mode, fixed_value=1.0, dtype=np.float64):
    if mode == "fixed":
        return FixedGate(channels, fixed_value, dtype)
    if mode == "learnable_scalar":
        return LearnableScalarGate(channels, dtype)
    if mode == "learnable_per_channel":
        return LearnablePerChannelGate(channels, dtype)
    if mode == "hard_sigmoid":
        return HardSigmoidGate(channels, dtype)
    raise ConfigurationError(f"unknown gate mode {mode!r}; expected one of {GATE_MODES}")


class HierarchicalBranch(Layer):
    """BN-ReLU-conv funnel with multi-scale channel widths N/2, N/4, N/4."""

    def __init__(self, channels, dtype=np.float64):
        super().__init__()
        if channels % 4:
            raise ConfigurationError(f"branch width must be divisible by 4, got {channels}")
        half, quarter = channels // 2, channels // 4

        def stage(idx, cin, cout):
            bn = self.add_child(f"bn{idx}", BatchNorm2d(cin, dtype=dtype))
            spec = ops.ConvSpec(cin, cout, kernel=3, padding=1)
            conv = self.add_child(f"conv{idx}", Conv2d(spec, bias=False, dtype=dtype))
            return bn, conv

        self.bn1, self.conv1 = stage(1, channels, half)
        self.bn2, self.conv2 = stage(2, half, quarter)
        self.bn3, self.conv3 = stage(3, quarter, quarter)

    def forward(self, x):
        y1 = self.conv1(ops.relu(self.bn1(x)))
        y2 = self.conv2(ops.relu(self.bn2(y1)))
        y3 = self.conv3(ops.relu(self.bn3(y2)))
        return ops.concat_channels((y1, y2, y3))


class GatedBlock(Layer):
    """gate(x) + branch(x), width-preserving."""

    def __init__(self, channels, gate_mode="learnable_per_channel",
                 fixed_value=1.0, dtype=np.float64):
        super().__init__()
        self.channels = int(channels)
        self.branch = self.add_child("branch", HierarchicalBranch(channels, dtype))
        self.gate = self.add_child("gate", make_gate(channels, gate_mode, fixed_value, dtype))
        self.probe = None  # set to a dict to capture the four internal signals

    def forward(self, x):
        gated = self.gate(x)
        branch = self.branch(x)
        out = ops.add(gated, branch)
        if self.probe is not None:
            self.probe.update(pre_gate=x.data, post_gate=gated.data,
                              branch=branch.data, output=out.data)
        return out

    def gate_values(self):
        return self.gate.gate_values()
