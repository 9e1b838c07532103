"""Tensor with a reverse-mode tape.

Each op output keeps references to its inputs and a closure mapping the
output gradient to input gradients. ``backward`` walks the recorded graph
in reverse topological order exactly once per node and accumulates
gradients into leaf tensors that ask for them.
"""

from __future__ import annotations

import contextlib
from collections import OrderedDict
from typing import Callable, Iterator, Sequence

import numpy as np

from ..errors import ContractError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording (inference)."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def sum(self, axis=None, keepdims: bool = False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_node(
    data: np.ndarray,
    parents: Sequence[Tensor],
    backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]],
) -> Tensor:
    """Wrap an op result, recording it on the tape when any input needs grads."""
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor requiring gradients")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


class ParameterStore:
    """Named trainable tensors plus non-trainable buffers (running statistics).

    Iteration order is insertion order, so a model built the same way
    always enumerates the same names in the same sequence.
    """

    def __init__(self):
        self.params: OrderedDict[str, Tensor] = OrderedDict()
        self.buffers: OrderedDict[str, np.ndarray] = OrderedDict()

    def add_param(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params or name in self.buffers:
            raise KeyError(f"duplicate entry {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        self.params[name] = t
        return t

    def add_buffer(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self.params or name in self.buffers:
            raise KeyError(f"duplicate entry {name!r}")
        arr = np.array(value, dtype=np.float64)
        self.buffers[name] = arr
        return arr

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params or name in self.buffers

    def buffer(self, name: str) -> np.ndarray:
        return self.buffers[name]

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self.params.items())

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    def num_parameters(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def state(self) -> OrderedDict[str, np.ndarray]:
        """Flat name -> array view of params followed by buffers."""
        out: OrderedDict[str, np.ndarray] = OrderedDict()
        for k, t in self.params.items():
            out[k] = t.data
        for k, b in self.buffers.items():
            out[k] = b
        return out

    def snapshot(self) -> OrderedDict[str, np.ndarray]:
        return OrderedDict((k, v.copy()) for k, v in self.state().items())

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        expected = list(self.state())
        if sorted(expected) != sorted(state):
            missing = set(expected) - set(state)
            extra = set(state) - set(expected)
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for k, t in self.params.items():
            if t.data.shape != state[k].shape:
                raise ValueError(f"{k}: shape {state[k].shape} != {t.data.shape}")
            t.data[...] = state[k]
        for k, b in self.buffers.items():
            if b.shape != state[k].shape:
                raise ValueError(f"{k}: shape {state[k].shape} != {b.shape}")
            b[...] = state[k]
