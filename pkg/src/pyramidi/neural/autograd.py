"""Reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` wraps an ndarray and remembers how it was produced; calling
``backward()`` on a scalar result walks the recorded graph in reverse
topological order and accumulates gradients into every tensor created with
``requires_grad=True``. The op set is exactly what a transformer needs:
broadcasting arithmetic, (batched) matmul, reductions, shape moves, stable
softmax/log-softmax, fused layer norm, embedding lookup, and a gather along
the last axis whose backward scatter-adds (used for relative-position
shifts).

Design points worth knowing:

* Graphs are recorded only while grad mode is on (see :func:`no_grad`) and
  at least one input requires grad; inference builds no graph at all.
* ``backward()`` frees the graph it consumed. Calling it a second time on
  the same result raises instead of silently returning garbage.
* Gradients accumulate across calls (``p.grad += ...``); optimizers are
  responsible for zeroing them between steps.
* dtype follows the data (float32 for training, float64 for gradient
  checks); python scalars never upcast a float32 graph.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

__all__ = ["Tensor", "no_grad", "grad_enabled", "concat", "stack"]

_GRAD_ENABLED = True


def grad_enabled() -> bool:
    return _GRAD_ENABLED


@contextlib.contextmanager
def no_grad():
    """Context manager that disables graph recording inside its body."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to ``shape``, undoing numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    squeezed = tuple(
        axis for axis, size in enumerate(shape) if size == 1 and grad.shape[axis] != 1
    )
    if squeezed:
        grad = grad.sum(axis=squeezed, keepdims=True)
    return grad


class Tensor:
    """An ndarray plus the recipe for differentiating whatever made it."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_released")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            raise TypeError("wrap ndarrays or scalars, not Tensors")
        array = np.asarray(data, dtype=dtype)
        if not np.issubdtype(array.dtype, np.floating):
            array = array.astype(np.float32)
        self.data: np.ndarray = array
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._released = False

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _result(
        data: np.ndarray,
        parents: tuple["Tensor", ...],
        backward: Callable[[np.ndarray], None],
    ) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out._released = False
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def _accumulate(self, grad: np.ndarray, owned: bool = False) -> None:
        """Add ``grad`` into this tensor's gradient buffer.

        ``owned=True`` promises the caller computed ``grad`` fresh for this
        tensor alone (no other tensor's gradient shares the buffer), letting
        the first accumulation adopt it without a copy. Ops that pass the
        upstream gradient through unchanged to several parents must leave
        ``owned`` False, or a later in-place add would corrupt a sibling.
        """
        if self.grad is None:
            if owned and grad.flags.writeable and grad.dtype == self.data.dtype:
                self.grad = grad
            else:
                self.grad = np.array(grad, dtype=self.data.dtype)
        else:
            self.grad += grad

    # -- introspection ---------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        return float(self.data.item())

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    # -- arithmetic ------------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = self._coerce(other)
        data = self.data + other.data

        def backward(g: np.ndarray) -> None:
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.data.shape))

        return Tensor._result(data, (self, other), backward)

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        def backward(g: np.ndarray) -> None:
            self._accumulate(-g, owned=True)

        return Tensor._result(-self.data, (self,), backward)

    def __sub__(self, other) -> "Tensor":
        other = self._coerce(other)
        data = self.data - other.data

        def backward(g: np.ndarray) -> None:
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(-g, other.data.shape), owned=True)

        return Tensor._result(data, (self, other), backward)

    def __rsub__(self, other) -> "Tensor":
        return self._coerce(other) - self

    def __mul__(self, other) -> "Tensor":
        other = self._coerce(other)
        data = self.data * other.data

        def backward(g: np.ndarray) -> None:
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.data.shape), owned=True)
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.data.shape), owned=True)

        return Tensor._result(data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = self._coerce(other)
        data = self.data / other.data

        def backward(g: np.ndarray) -> None:
            if self.requires_grad:
                self._accumulate(_unbroadcast(g / other.data, self.data.shape), owned=True)
            if other.requires_grad:
                other._accumulate(
                    _unbroadcast(-g * self.data / (other.data * other.data), other.data.shape),
                    owned=True,
                )

        return Tensor._result(data, (self, other), backward)

    def __rtruediv__(self, other) -> "Tensor":
        return self._coerce(other) / self

    def __pow__(self, exponent: float) -> "Tensor":
        if isinstance(exponent, Tensor):
            raise TypeError("only scalar exponents are supported")
        data = self.data ** exponent

        def backward(g: np.ndarray) -> None:
            self._accumulate(g * exponent * self.data ** (exponent - 1), owned=True)

        return Tensor._result(data, (self,), backward)

    def __matmul__(self, other) -> "Tensor":
        other = self._coerce(other)
        data = np.matmul(self.data, other.data)

        def backward(g: np.ndarray) -> None:
            if self.requires_grad:
                ga = np.matmul(g, other.data.swapaxes(-1, -2))
                self._accumulate(_unbroadcast(ga, self.data.shape), owned=True)
            if other.requires_grad:
                gb = np.matmul(self.data.swapaxes(-1, -2), g)
                other._accumulate(_unbroadcast(gb, other.data.shape), owned=True)

        return Tensor._result(data, (self, other), backward)

    # -- elementwise functions ---------------------------------------------------

    def exp(self) -> "Tensor":
        data = np.exp(self.data)

        def backward(g: np.ndarray) -> None:
            self._accumulate(g * data, owned=True)

        return Tensor._result(data, (self,), backward)

    def log(self) -> "Tensor":
        data = np.log(self.data)

        def backward(g: np.ndarray) -> None:
            self._accumulate(g / self.data, owned=True)

        return Tensor._result(data, (self,), backward)

    def relu(self) -> "Tensor":
        mask = self.data > 0
        data = np.where(mask, self.data, 0)

        def backward(g: np.ndarray) -> None:
            self._accumulate(g * mask, owned=True)

        return Tensor._result(data, (self,), backward)

    # -- reductions ----------------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        data = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(g: np.ndarray) -> None:
            grad = g
            if not keepdims and axis is not None:
                grad = np.expand_dims(grad, axis)
            self._accumulate(np.broadcast_to(grad, self.data.shape).astype(self.data.dtype), owned=True)

        return Tensor._result(np.asarray(data), (self,), backward)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        count = self.data.size if axis is None else np.prod(
            [self.data.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))]
        )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(count))

    # -- shape moves ------------------------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        data = self.data.reshape(shape)

        def backward(g: np.ndarray) -> None:
            self._accumulate(g.reshape(self.data.shape), owned=True)

        return Tensor._result(data, (self,), backward)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.data.ndim)))
        axes = tuple(a % self.data.ndim for a in axes)
        inverse = np.argsort(axes)
        data = self.data.transpose(axes)

        def backward(g: np.ndarray) -> None:
            self._accumulate(g.transpose(inverse), owned=True)

        return Tensor._result(data, (self,), backward)

    def __getitem__(self, key) -> "Tensor":
        """Basic indexing only (ints/slices); fancy indexing would need
        scatter-add on the way back and has its own dedicated ops."""
        data = self.data[key]

        def backward(g: np.ndarray) -> None:
            full = np.zeros_like(self.data)
            full[key] = g
            self._accumulate(full, owned=True)

        return Tensor._result(data, (self,), backward)

    # -- fused, numerically careful ops --------------------------------------------------

    def softmax(self, axis: int = -1) -> "Tensor":
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        exp = np.exp(shifted)
        probs = exp / exp.sum(axis=axis, keepdims=True)

        def backward(g: np.ndarray) -> None:
            inner = (g * probs).sum(axis=axis, keepdims=True)
            self._accumulate(probs * (g - inner), owned=True)

        return Tensor._result(probs, (self,), backward)

    def log_softmax(self, axis: int = -1) -> "Tensor":
        maxed = self.data.max(axis=axis, keepdims=True)
        shifted = self.data - maxed
        logsum = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
        out = shifted - logsum

        def backward(g: np.ndarray) -> None:
            self._accumulate(g - np.exp(out) * g.sum(axis=axis, keepdims=True), owned=True)

        return Tensor._result(out, (self,), backward)

    def layer_norm(self, gain: "Tensor", bias: "Tensor", eps: float = 1e-5) -> "Tensor":
        """Normalize over the last axis, then scale and shift."""
        mu = self.data.mean(axis=-1, keepdims=True)
        centered = self.data - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        inv_sigma = 1.0 / np.sqrt(var + eps)
        x_hat = centered * inv_sigma
        data = x_hat * gain.data + bias.data

        def backward(g: np.ndarray) -> None:
            if gain.requires_grad:
                gain._accumulate(_unbroadcast(g * x_hat, gain.data.shape), owned=True)
            if bias.requires_grad:
                bias._accumulate(_unbroadcast(g, bias.data.shape))
            if self.requires_grad:
                g_hat = g * gain.data
                term = g_hat - g_hat.mean(axis=-1, keepdims=True)
                term -= x_hat * (g_hat * x_hat).mean(axis=-1, keepdims=True)
                self._accumulate(term * inv_sigma, owned=True)

        return Tensor._result(data, (self, gain, bias), backward)

    def take_last_axis(self, indices: np.ndarray) -> "Tensor":
        """Gather along the last axis; backward scatter-adds duplicates."""
        indices = np.asarray(indices)
        data = np.take_along_axis(self.data, indices, axis=-1)

        def backward(g: np.ndarray) -> None:
            full = np.zeros_like(self.data)
            grids = np.ogrid[tuple(slice(s) for s in indices.shape)]
            np.add.at(full, tuple(grids[:-1]) + (indices,), g)
            self._accumulate(full, owned=True)

        return Tensor._result(data, (self,), backward)

    # -- backward pass --------------------------------------------------------------------

    def backward(self) -> None:
        """Backpropagate from this scalar through the recorded graph.

        Raises:
            RuntimeError: The tensor is not a scalar, was produced with grad
                recording off, or its graph was already consumed by an
                earlier ``backward()`` call.
        """
        if self._released:
            raise RuntimeError(
                "backward() called twice on the same graph; run a new forward pass"
            )
        if self.data.size != 1:
            raise RuntimeError(f"backward() needs a scalar, got shape {self.data.shape}")
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor with no recorded graph")

        ordered: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                ordered.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen and parent._backward is not None:
                    stack.append((parent, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(ordered):
            backward_fn = node._backward
            if backward_fn is not None and node.grad is not None:
                backward_fn(node.grad)
            node._released = True
            node._backward = None
            node._parents = ()
            if node is not self:
                node.grad = None  # interior grads are scratch; leaves keep theirs


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate tensors along ``axis``."""
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g: np.ndarray) -> None:
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                index: list = [slice(None)] * g.ndim
                index[axis] = slice(int(lo), int(hi))
                t._accumulate(g[tuple(index)], owned=True)

    return Tensor._result(data, tuple(tensors), backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Stack tensors along a new axis."""
    expanded = []
    for t in tensors:
        shape = list(t.data.shape)
        shape.insert(axis if axis >= 0 else axis + t.data.ndim + 1, 1)
        expanded.append(t.reshape(tuple(shape)))
    return concat(expanded, axis=axis)


def dropout(x: Tensor, p: float, rng: np.random.Generator, train: bool) -> Tensor:
    """Inverted dropout; identity when not training or ``p == 0``.

    The mask is drawn from ``rng`` even though the scaled multiply is what
    enters the graph, so RNG consumption is deterministic per call.
    """
    if not train or p <= 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    keep = (rng.random(x.data.shape) >= p).astype(x.data.dtype)
    scale = Tensor(keep / (1.0 - p))
    return x * scale


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    """Rows of ``table`` selected by integer ``ids`` (any shape)."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise IndexError(
            f"token id outside embedding table of {table.data.shape[0]} rows"
        )
    data = table.data[ids]

    def backward(g: np.ndarray) -> None:
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        table._accumulate(full, owned=True)

    return Tensor._result(data, (table,), backward)


def parameter(data: np.ndarray) -> Tensor:
    """A leaf tensor that collects gradients."""
    return Tensor(data, requires_grad=True)


def as_const(data, dtype=None) -> Tensor:
    """A leaf tensor outside the graph (mask, positional table, ...)."""
    return Tensor(data, dtype=dtype)
