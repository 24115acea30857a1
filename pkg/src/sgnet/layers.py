"""Layer base class and the two parameterized primitives.

Layers register parameters, buffers and children explicitly; the dotted
names produced by traversal are the checkpoint schema, so registration
order is part of the on-disk contract. Parameters are Tensors with
requires_grad set; buffers (batchnorm running stats) are plain arrays that
persist in checkpoints but take no gradient.
"""

import numpy as np

from . import ops
from .errors import CheckpointMismatchError, ConfigurationError
from .tensor import Tensor


class Layer:
    def __init__(self):
        self._params = {}
        self._buffers = {}
        self._children = {}
        self.training = True

    def add_param(self, name, value, dtype=np.float64) -> Tensor:
        if name in self._params or name in self._buffers or name in self._children:
            raise ConfigurationError(f"duplicate registration {name!r}")
        tensor = Tensor(np.asarray(value, dtype=dtype), requires_grad=True)
        self._params[name] = tensor
        return tensor

    def add_buffer(self, name, value, dtype=np.float64) -> np.ndarray:
        if name in self._params or name in self._buffers or name in self._children:
            raise ConfigurationError(f"duplicate registration {name!r}")
        array = np.asarray(value, dtype=dtype)
        self._buffers[name] = array
        return array

    def add_child(self, name, layer):
        if name in self._params or name in self._buffers or name in self._children:
            raise ConfigurationError(f"duplicate registration {name!r}")
        if not isinstance(layer, Layer):
            raise ConfigurationError(f"child {name!r} is not a Layer")
        self._children[name] = layer
        return layer

    def named_params(self, prefix=""):
        for name, tensor in self._params.items():
            yield prefix + name, tensor
        for name, child in self._children.items():
            yield from child.named_params(prefix + name + ".")

    def named_buffers(self, prefix=""):
        for name, array in self._buffers.items():
            yield prefix + name, array
        for name, child in self._children.items():
            yield from child.named_buffers(prefix + name + ".")

    def params(self):
        return [tensor for _, tensor in self.named_params()]

    def train(self, mode=True):
        self.training = bool(mode)
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for tensor in self.params():
            tensor.grad = None

    def state_arrays(self):
        """Checkpoint payload: params then buffers, traversal order."""
        state = {name: tensor.data for name, tensor in self.named_params()}
        for name, array in self.named_buffers():
            state[name] = array
        return state

    def load_state_arrays(self, arrays):
        expected = self.state_arrays()
        missing = [k for k in expected if k not in arrays]
        extra = [k for k in arrays if k not in expected]
        if missing or extra:
            raise CheckpointMismatchError(
                f"checkpoint schema mismatch: missing={missing[:4]} extra={extra[:4]} "
                f"({len(missing)} missing, {len(extra)} extra)"
            )
        for name, target in expected.items():
            value = np.asarray(arrays[name])
            if value.shape != target.shape:
                raise CheckpointMismatchError(
                    f"{name}: shape {value.shape} != expected {target.shape}"
                )
            target[...] = value.astype(target.dtype, copy=False)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


class LayerList(Layer):
    """Sequence container; children named by index."""

    def __init__(self, layers=()):
        super().__init__()
        self._items = []
        for layer in layers:
            self.append(layer)

    def append(self, layer):
        self.add_child(str(len(self._items)), layer)
        self._items.append(layer)
        return layer

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, index):
        return self._items[index]


class Conv2d(Layer):
    """Weights start at zero; init_network draws the real values."""

    def __init__(self, spec: ops.ConvSpec, bias=True, dtype=np.float64):
        super().__init__()
        self.spec = spec
        self.fan_in = (spec.in_channels // spec.groups) * spec.kernel[0] * spec.kernel[1]
        self.weight = self.add_param("weight", np.zeros(spec.weight_shape), dtype)
        self.bias = self.add_param("bias", np.zeros(spec.out_channels), dtype) if bias else None

    def forward(self, x):
        return ops.conv2d(x, self.weight, self.bias, self.spec)


class BatchNorm2d(Layer):
    def __init__(self, channels, eps=1e-5, momentum=0.1, dtype=np.float64):
        super().__init__()
        self.channels = int(channels)
        self.eps = float(eps)
        self.momentum = float(momentum)
        self.gamma = self.add_param("gamma", np.ones(channels), dtype)
        self.beta = self.add_param("beta", np.zeros(channels), dtype)
        self.running_mean = self.add_buffer("running_mean", np.zeros(channels), dtype)
        self.running_var = self.add_buffer("running_var", np.ones(channels), dtype)

    def forward(self, x):
        return ops.batchnorm2d(x, self.gamma, self.beta,
                               self.running_mean, self.running_var,
                               self.training, self.momentum, self.eps)
