"""Define-by-run reverse-mode differentiation over dense float64 arrays."""
from __future__ import annotations

import itertools
from contextlib import contextmanager
from typing import Callable, Iterator, Optional

import numpy as np

_node_ids = itertools.count()
_grad_enabled = True


class ShapeError(ValueError):
    pass


class ContractError(ValueError):
    pass


def is_grad_enabled() -> bool:
    return _grad_enabled


@contextmanager
def no_grad() -> Iterator[None]:
    """Build no graph inside the block; ops return detached arrays."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class DiffArray:
    """A value in the computation graph.

    ``parents`` holds the inputs of the op that produced this node and
    ``backward_fn`` maps the upstream gradient to one gradient per parent
    (``None`` where a parent needs none).
    """

    __slots__ = ("values", "grad", "parents", "backward_fn", "replay", "kwargs", "op", "node_id", "requires_grad")
    __array_priority__ = 100.0

    def __init__(
        self,
        values,
        requires_grad: bool = False,
        parents: tuple = (),
        backward_fn: Optional[Callable] = None,
        op: str = "leaf",
        replay: Optional[Callable[[], np.ndarray]] = None,
    ):
        if type(values) is not np.ndarray or values.dtype != np.float64:
            values = np.asarray(values, dtype=np.float64)
        self.values = values
        self.grad: Optional[np.ndarray] = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.replay = replay
        self.kwargs = None
        self.op = op
        self.node_id = next(_node_ids)
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        return float(self.values.reshape(-1)[0]) if self.values.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.values

    def detach(self) -> "DiffArray":
        return DiffArray(self.values)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True).reshape(self.values.shape)
        else:
            self.grad += g

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"DiffArray(shape={self.shape}, op={self.op})"

    # operator sugar; implementations live in ops
    def __add__(self, other):
        ops = _ops()
        return ops.add(self, other)

    def __radd__(self, other):
        ops = _ops()
        return ops.add(other, self)

    def __sub__(self, other):
        ops = _ops()
        return ops.sub(self, other)

    def __rsub__(self, other):
        ops = _ops()
        return ops.sub(other, self)

    def __mul__(self, other):
        ops = _ops()
        return ops.mul(self, other)

    def __rmul__(self, other):
        ops = _ops()
        return ops.mul(other, self)

    def __truediv__(self, other):
        ops = _ops()
        return ops.div(self, other)

    def __rtruediv__(self, other):
        ops = _ops()
        return ops.div(other, self)

    def __neg__(self):
        ops = _ops()
        return ops.mul(self, -1.0)

    def __pow__(self, exponent):
        return _ops().power(self, float(exponent))

    def __matmul__(self, other):
        ops = _ops()
        return ops.matmul(self, other)

    def __getitem__(self, index):
        ops = _ops()
        return ops.index(self, index)

    @property
    def T(self):
        ops = _ops()
        return ops.transpose(self)

    def reshape(self, *shape):
        ops = _ops()
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        ops = _ops()
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        ops = _ops()
        return ops.mean(self, axis=axis, keepdims=keepdims)


_OPS = None


def _ops():
    global _OPS
    if _OPS is None:
        from . import ops

        _OPS = ops
    return _OPS


def as_array(x) -> DiffArray:
    return x if isinstance(x, DiffArray) else DiffArray(x)


def make_node(values: np.ndarray, parents: tuple, backward_fn: Callable, op: str,
              replay: Optional[Callable[[], np.ndarray]] = None, kwargs: Optional[dict] = None) -> DiffArray:
    """Wrap an op result, recording the graph edge only when some parent needs it.

    ``replay`` recomputes the value from the parents' current values;
    ``kwargs`` keeps the op's non-array arguments for inspection.
    """
    if _grad_enabled:
        for p in parents:
            if p.requires_grad:
                node = DiffArray(values, True, tuple(parents), backward_fn, op, replay)
                node.kwargs = kwargs
                return node
    return DiffArray(values, op=op)


def _topological_order(root: DiffArray) -> list:
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.node_id in visited:
            continue
        visited.add(node.node_id)
        stack.append((node, True))
        for parent in node.parents:
            if parent.requires_grad and parent.node_id not in visited:
                stack.append((parent, False))
    return order


def backward(root: DiffArray) -> None:
    """Accumulate d(root)/d(node) into ``.grad`` of every reachable node."""
    if root.values.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    order = _topological_order(root)
    root.accumulate(np.ones_like(root.values))
    for node in reversed(order):
        if node.backward_fn is None or node.grad is None:
            continue
        grads = node.backward_fn(node.grad)
        for parent, g in zip(node.parents, grads):
            if g is None or not parent.requires_grad:
                continue
            parent.accumulate(g)
        if node.parents:
            # interior nodes are never read again; free memory early
            node.grad = None if node is not root else node.grad
