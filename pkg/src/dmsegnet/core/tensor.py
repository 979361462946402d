"""Reverse-mode differentiable tensors backed by numpy arrays.

The engine is a plain tape: every operation that sees a gradient-requiring
input records its parents and a vector-Jacobian closure on the output.
``Tensor.backward`` walks the recorded graph once in reverse topological
order and accumulates gradients into leaf tensors.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

from ..errors import AutodiffError, ShapeError

FLOAT_DTYPES = (np.float32, np.float64)
DEFAULT_DTYPE = np.float32

_grad_enabled = True


def is_grad_enabled() -> bool:
    return _grad_enabled


class no_grad:
    """Context manager that suspends graph recording."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


ArrayLike = Union[np.ndarray, float, int, Sequence]


class Tensor:
    """N-dimensional real-valued array with optional gradient tracking.

    ``data`` is always a float32 or float64 numpy array; ``grad`` (when
    present) has the same shape and dtype as ``data``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data: ArrayLike, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._vjp: Optional[Callable] = None

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def astype(self, dtype) -> "Tensor":
        from . import ops  # local import to avoid a cycle

        return ops.cast(self, dtype)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # -- gradient machinery --------------------------------------------

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Accumulate gradients of this scalar into every reachable leaf.

        Repeated calls without ``zero_grad`` add into the existing buffers.
        """
        if self.data.size != 1:
            raise AutodiffError("backward requires a scalar tensor")
        if self._vjp is None and not self.requires_grad:
            raise AutodiffError(
                "tensor was not produced by a recorded differentiable computation"
            )

        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._vjp(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None:
                    continue
                if pg.shape != parent.data.shape:
                    raise AutodiffError(
                        f"vjp produced gradient of shape {pg.shape} for parent "
                        f"of shape {parent.data.shape}"
                    )
                acc = grads.get(id(parent))
                grads[id(parent)] = pg if acc is None else acc + pg

    # -- operator sugar (defined in ops, attached lazily) ---------------

    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops

        return ops.sub(other, self)

    def __neg__(self):
        from . import ops

        return ops.neg(self)

    def __truediv__(self, other):
        from . import ops

        if isinstance(other, Tensor):
            raise AutodiffError("tensor/tensor division is not a supported primitive")
        return ops.mul(self, 1.0 / other)


class Parameter(Tensor):
    """A leaf tensor that always participates in gradient accumulation."""

    def __init__(self, data: ArrayLike, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


def as_tensor(value: ArrayLike, dtype=None) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value, dtype=dtype)


def record(data: np.ndarray, parents: Iterable[Tensor], vjp: Callable) -> Tensor:
    """Wrap an op result, attaching the tape node when gradients are live."""
    out = Tensor(data)
    if _grad_enabled:
        parents = tuple(parents)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._vjp = vjp
    return out


def _topological_order(root: Tensor) -> list:
    """Reverse topological order (root first) via iterative post-order DFS."""
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
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    order.reverse()
    return order


def check_finite(t: Tensor, label: str = "tensor") -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise ShapeError(f"{label} contains non-finite values")
    return t
