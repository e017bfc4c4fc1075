"""Reverse-mode differentiation over a small closed set of primitives.

A ``Tape`` records every primitive application in execution order (a Wengert
list). ``Tape.backward`` walks that list in reverse, feeding each node's
upstream gradient through its vector-Jacobian product and accumulating into
the parents. Leaves bound to a ``Parameter`` deposit their gradient on the
parameter itself.

Primitives: matmul, add, mul, exp, log, power, relu, softmax, sum, gather and
the selective scan registered by ``app.mixers.semiseparable``. Everything the
models need is composed from these.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..core.exceptions import GraphError, ShapeError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int]


@dataclass(eq=False)
class Parameter:
    """A learnable array with its accumulated gradient"""
    name: str
    value: np.ndarray
    grad: np.ndarray = field(default=None)

    def __post_init__(self):
        self.value = np.array(self.value, dtype=np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        elif self.grad.shape != self.value.shape:
            raise ShapeError(f"gradient of {self.name} must match its value", self.grad.shape, self.value.shape)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def size(self) -> int:
        return int(self.value.size)

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def copy(self, name: str = None) -> "Parameter":
        return Parameter(name or self.name, self.value.copy())


class Node:
    """One value on a tape"""

    __slots__ = ("tape", "value", "parents", "vjp", "forward", "op", "param", "index")

    def __init__(self, tape, value, parents, vjp, forward, op, param=None):
        self.tape = tape
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.forward = forward
        self.op = op
        self.param = param
        self.index = -1

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self):
        return f"Node(op={self.op}, shape={self.shape})"

    # Operator sugar; constants are lifted onto the same tape
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        if isinstance(other, Node):
            return add(self, mul(other, -1.0))
        return add(self, -np.asarray(other, dtype=np.float64))

    def __rsub__(self, other):
        return add(other, mul(self, -1.0))

    def __neg__(self):
        return mul(self, -1.0)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, Node):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, exponent: float):
        return power(self, exponent)


class Tape:
    """Ordered record of primitive applications for one forward pass"""

    def __init__(self):
        self.nodes: List[Node] = []
        self._leaves: Dict[int, Node] = {}
        self.detached: List[str] = []

    def __len__(self):
        return len(self.nodes)

    def _append(self, node: Node) -> Node:
        node.index = len(self.nodes)
        self.nodes.append(node)
        return node

    def constant(self, value: ArrayLike) -> Node:
        value = np.asarray(value, dtype=np.float64)
        return self._append(Node(self, value, (), None, None, "const"))

    def param(self, parameter: Parameter) -> Node:
        """Leaf bound to ``parameter``; one leaf per parameter per tape"""
        leaf = self._leaves.get(id(parameter))
        if leaf is None:
            leaf = self._append(Node(self, parameter.value, (), None, None, "param", param=parameter))
            self._leaves[id(parameter)] = leaf
        return leaf

    def lift(self, value) -> Node:
        if isinstance(value, Node):
            if value.tape is not self:
                raise GraphError("node belongs to a different tape")
            return value
        if isinstance(value, Parameter):
            return self.param(value)
        return self.constant(value)

    def record(self, op: str, parents: Sequence[Node], forward: Callable, vjp: Callable) -> Node:
        """Apply ``forward`` to the parents' values and record the node.

        ``vjp(upstream, *parent_values, out)`` returns one gradient (or None) per parent.
        """
        parents = tuple(parents)
        for parent in parents:
            if parent.tape is not self:
                raise GraphError(f"{op}: operand belongs to a different tape")
        value = forward(*(p.value for p in parents))
        return self._append(Node(self, value, parents, vjp, forward, op))

    def replay(self) -> List[np.ndarray]:
        """Recompute every value from its parents in recorded order"""
        values: List[np.ndarray] = []
        for node in self.nodes:
            if node.forward is None:
                values.append(node.value)
            else:
                values.append(node.forward(*(values[p.index] for p in node.parents)))
        return values

    def backward(self, loss: Node, seed: ArrayLike = 1.0) -> Dict[str, np.ndarray]:
        """Accumulate d(loss)/d(param) into every watched parameter"""
        if loss.tape is not self:
            raise GraphError("loss was not produced on this tape")
        if loss.value.size != 1:
            raise GraphError(f"loss must be a scalar, got shape {loss.value.shape}")

        grads: Dict[int, np.ndarray] = {loss.index: np.broadcast_to(
            np.asarray(seed, dtype=np.float64), loss.value.shape).copy()}
        for node in reversed(self.nodes[:loss.index + 1]):
            upstream = grads.pop(node.index, None) if node.parents else grads.get(node.index)
            if upstream is None or node.vjp is None:
                continue
            parent_grads = node.vjp(upstream, *(p.value for p in node.parents), node.value)
            for parent, g in zip(node.parents, parent_grads):
                if g is None or parent.op == "const":
                    continue
                if parent.index in grads:
                    grads[parent.index] = grads[parent.index] + g
                else:
                    grads[parent.index] = g

        result: Dict[str, np.ndarray] = {}
        self.detached = []
        for leaf in self._leaves.values():
            g = grads.get(leaf.index)
            if g is None:
                self.detached.append(leaf.param.name)
                continue
            leaf.param.grad = leaf.param.grad + g
            result[leaf.param.name] = g
        if self.detached:
            logger.warning(f"Parameters detached from the loss: {', '.join(sorted(self.detached))}")
        return result


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``"""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _tape_of(*operands) -> Tape:
    for operand in operands:
        if isinstance(operand, Node):
            return operand.tape
    raise GraphError("at least one operand must be a tape node")


def _swap(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


def matmul(a, b) -> Node:
    tape = _tape_of(a, b)
    a, b = tape.lift(a), tape.lift(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul dimension mismatch", a.shape, b.shape)

    def vjp(g, x, y, out):
        return unbroadcast(g @ _swap(y), x.shape), unbroadcast(_swap(x) @ g, y.shape)

    return tape.record("matmul", (a, b), np.matmul, vjp)


def add(a, b) -> Node:
    tape = _tape_of(a, b)
    a, b = tape.lift(a), tape.lift(b)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError("add operands do not broadcast", a.shape, b.shape) from None

    def vjp(g, x, y, out):
        return unbroadcast(g, x.shape), unbroadcast(g, y.shape)

    return tape.record("add", (a, b), np.add, vjp)


def mul(a, b) -> Node:
    tape = _tape_of(a, b)
    a, b = tape.lift(a), tape.lift(b)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError("mul operands do not broadcast", a.shape, b.shape) from None

    def vjp(g, x, y, out):
        return unbroadcast(g * y, x.shape), unbroadcast(g * x, y.shape)

    return tape.record("mul", (a, b), np.multiply, vjp)


def exp(a: Node) -> Node:
    return a.tape.record("exp", (a,), np.exp, lambda g, x, out: (g * out,))


def log(a: Node) -> Node:
    return a.tape.record("log", (a,), np.log, lambda g, x, out: (g / x,))


def power(a: Node, exponent: float) -> Node:
    exponent = float(exponent)

    def forward(x):
        return np.power(x, exponent)

    def vjp(g, x, out):
        return (g * exponent * np.power(x, exponent - 1.0),)

    return a.tape.record("power", (a,), forward, vjp)


def relu(a: Node) -> Node:
    return a.tape.record("relu", (a,), lambda x: np.maximum(x, 0.0), lambda g, x, out: (g * (x > 0),))


def softmax(a: Node) -> Node:
    """Softmax over the last axis; backward uses the closed-form JVP"""

    def forward(x):
        shifted = x - np.max(x, axis=-1, keepdims=True)
        weights = np.exp(shifted)
        return weights / np.sum(weights, axis=-1, keepdims=True)

    def vjp(g, x, out):
        return (out * (g - np.sum(g * out, axis=-1, keepdims=True)),)

    return a.tape.record("softmax", (a,), forward, vjp)


def sum(a: Node, axis=None, keepdims: bool = False) -> Node:  # noqa: A001 - mirrors numpy
    def forward(x):
        return np.sum(x, axis=axis, keepdims=keepdims)

    def vjp(g, x, out):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        elif axis is None and not keepdims:
            g = np.reshape(g, (1,) * x.ndim)
        return (np.broadcast_to(g, x.shape).copy(),)

    return a.tape.record("sum", (a,), forward, vjp)


def gather(a: Node, index: np.ndarray, batch_dims: int = 0) -> Node:
    """Index the flattened trailing block of ``a``.

    The trailing ``a.ndim - batch_dims`` axes are flattened and indexed with the
    integer array ``index``; the result has shape ``batch + index.shape``. This one
    primitive covers reshapes, transposes, slices, reversals and the structured
    (Toeplitz, lag) layouts.
    """
    index = np.asarray(index, dtype=np.intp)
    batch = a.shape[:batch_dims]
    inner = int(np.prod(a.shape[batch_dims:], dtype=np.int64))
    if index.size and (index.min() < 0 or index.max() >= inner):
        raise ShapeError(f"gather index out of range for trailing block of size {inner}", a.shape, index.shape)
    unique = np.unique(index).size == index.size

    def forward(x):
        return x.reshape(batch + (inner,))[..., index]

    def vjp(g, x, out):
        flat_batch = int(np.prod(batch, dtype=np.int64))
        target = np.zeros((flat_batch, inner))
        g = g.reshape(flat_batch, -1)
        flat_index = index.ravel()
        if unique:
            target[:, flat_index] = g
        else:
            np.add.at(target, (slice(None), flat_index), g)
        return (target.reshape(x.shape),)

    return a.tape.record("gather", (a,), forward, vjp)


# Composites -----------------------------------------------------------------

def mean(a: Node, axis=None, keepdims: bool = False) -> Node:
    axes = range(a.ndim) if axis is None else (axis if isinstance(axis, tuple) else (axis,))
    count = int(np.prod([a.shape[ax] for ax in axes], dtype=np.int64))
    return sum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def softplus(a: Node) -> Node:
    """log(1 + e^x) written as relu(x) + log(1 + e^-|x|) to stay finite"""
    magnitude = relu(a) + relu(-a)
    return relu(a) + log(exp(-magnitude) + 1.0)


def transpose_index(rows: int, cols: int) -> np.ndarray:
    """Flat index turning a rows x cols block into its transpose"""
    return np.arange(rows * cols).reshape(rows, cols).T.copy()


def swap_last(a: Node) -> Node:
    rows, cols = a.shape[-2:]
    return gather(a, transpose_index(rows, cols), batch_dims=a.ndim - 2)


def reverse_rows(a: Node) -> Node:
    """Flip the second-to-last (sequence) axis"""
    rows, cols = a.shape[-2:]
    index = np.arange(rows * cols).reshape(rows, cols)[::-1].copy()
    return gather(a, index, batch_dims=a.ndim - 2)


def log_softmax(a: Node) -> Node:
    """Log-softmax over the last axis with a constant max shift"""
    shift = a.tape.constant(np.max(a.value, axis=-1, keepdims=True))
    shifted = a - shift
    return shifted - log(sum(exp(shifted), axis=-1, keepdims=True))


def mse_loss(pred: Node, target: ArrayLike, mask: Optional[np.ndarray] = None) -> Node:
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError("prediction and target differ", pred.shape, target.shape)
    diff = pred - target
    if mask is None:
        return mean(diff * diff)
    mask = np.asarray(mask, dtype=np.float64)
    count = max(float(mask.sum()), 1.0)
    return sum(diff * diff * mask) * (1.0 / count)


def cross_entropy_loss(logits: Node, labels: np.ndarray) -> Node:
    labels = np.asarray(labels, dtype=np.intp)
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise ShapeError("logits must be (batch, classes) matching labels", logits.shape, labels.shape)
    one_hot = np.zeros(logits.shape)
    one_hot[np.arange(labels.shape[0]), labels] = 1.0
    return -(sum(log_softmax(logits) * one_hot) * (1.0 / labels.shape[0]))
