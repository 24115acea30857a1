"""Dense tensors and the reverse-mode autodiff tape.

Tensors wrap a numpy array (feature maps are (N,C,H,W); weights, gate
vectors and scalar losses use their natural ranks). Gradients flow through
a define-by-run graph: ops executed inside a ``with Tape():`` block stamp
their output tensor with the inputs and a backward rule, and
``backward(loss)`` walks that creator graph in reverse topological order,
accumulating additively across fan-out. Outside a tape block ops run
forward-only.

The graph hangs off the tensors, not the tape, and all references point
from outputs to inputs. Dropping the last output therefore frees a whole
forward pass by reference counting alone; a tape that owned its entries
would form cycles with the stamped outputs, and a training loop would
hold every step's activations hostage until a gen-2 garbage collection.
"""

import numpy as np

from .errors import NumericalError, UsageError


class Tensor:
    """Array value with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "tape", "_entry")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = np.asarray(data, dtype=dtype if dtype is not None else None)
        kind = self.data.dtype.kind
        if kind not in "fiub":
            raise UsageError(f"tensors must be real-valued, got dtype {self.data.dtype}")
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.tape = None
        self._entry = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}{flag})"


class _TapeEntry:
    __slots__ = ("name", "inputs", "rule")

    def __init__(self, name, inputs, rule):
        self.name = name
        self.inputs = inputs
        self.rule = rule


def _toposort(loss):
    """Recorded ancestors of loss, each listed after all of its inputs."""
    ordered = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            ordered.append(node)
            continue
        if id(node) in seen or node._entry is None:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._entry.inputs:
            stack.append((parent, False))
    return ordered


class Tape:
    """Recording context for one forward pass (single-writer)."""

    _stack: list = []

    def __init__(self, check_finite=False):
        self.check_finite = check_finite
        self._op_count = 0

    @classmethod
    def current(cls):
        return cls._stack[-1] if cls._stack else None

    def __enter__(self):
        Tape._stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = Tape._stack.pop()
        assert popped is self
        return False

    def record(self, name, inputs, output, rule):
        if self.check_finite and not np.isfinite(output.data).all():
            raise NumericalError(
                f"non-finite values first produced by op #{self._op_count} ({name})"
            )
        output.tape = self
        output._entry = _TapeEntry(name, inputs, rule)
        self._op_count += 1

    def backward(self, loss):
        """Populate .grad for every requires_grad tensor reachable from loss."""
        if not isinstance(loss, Tensor) or loss.data.size != 1:
            raise UsageError("backward requires a scalar loss tensor")
        if loss.tape is not self:
            raise UsageError("loss was not produced on this tape")
        ordered = _toposort(loss)
        # leaves accumulate across backward calls; recorded outputs are
        # transient, or a second backward would re-propagate stale grads
        for node in ordered:
            node.grad = None
        loss.grad = np.ones_like(loss.data)
        for node in reversed(ordered):
            grad_out = node.grad
            if grad_out is None:
                continue
            for tensor, grad in zip(node._entry.inputs, node._entry.rule(grad_out)):
                if grad is None or not tensor.requires_grad:
                    continue
                if tensor.grad is None:
                    tensor.grad = grad
                else:
                    tensor.grad = tensor.grad + grad


def backward(loss: Tensor) -> None:
    """Run reverse-mode differentiation from a scalar loss."""
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        raise UsageError("backward requires a scalar loss tensor")
    if loss.tape is None:
        raise UsageError("loss has no tape; run the forward pass inside `with Tape():`")
    loss.tape.backward(loss)


def record_op(name, inputs, out_data, rule):
    """Wrap an op result; registers it on the active tape when grads can flow."""
    tape = Tape.current()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=track)
    if track:
        tape.record(name, tuple(inputs), out, rule)
    elif tape is not None and tape.check_finite and not np.isfinite(out.data).all():
        raise NumericalError(f"non-finite values first produced by op ({name})")
    return out
