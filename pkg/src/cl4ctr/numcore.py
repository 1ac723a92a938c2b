"""Dense float64 tensors with reverse-mode differentiation, Adam, and a
central-difference gradient checker.

A graph is recorded eagerly: every op returns a new :class:`Tensor` that
remembers its parents and a closure that pushes its adjoint back to them.
:func:`backward` walks the recorded DAG in reverse topological order.
"""
from __future__ import annotations

import contextlib
import functools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

DTYPE = np.float64

_GRAD_ENABLED = True
CHECK_FINITE = True


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf from finite inputs."""


class ShapeError(ValueError):
    pass


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording the graph (inference / reporting)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """A node of the computation graph.

    ``data`` is a float64 ndarray; ``grad`` is filled by :func:`backward`
    for every node with ``requires_grad``.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 op: str = "leaf", parents: tuple = (), backward_fn=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = op
        self.parents = parents
        self._backward = backward_fn
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        tag = f" {self.name}" if self.name else ""
        return f"Tensor<{self.op}{tag}>(shape={self.shape})"

    # operator sugar
    def __add__(self, other):
        return add(self, _lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, _lift(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if np.isscalar(other):
            return scale(self, 1.0 / float(other))
        return div(self, _lift(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, _lift(other))

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=DTYPE), requires_grad=True, name=name)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check(out: np.ndarray, op: str) -> np.ndarray:
    # a NaN/Inf anywhere makes the sum non-finite; only then look closer
    if CHECK_FINITE and not np.isfinite(out.sum()) and not np.isfinite(out).all():
        raise NonFiniteError(f"non-finite value produced by {op}")
    return out


def _make(out: np.ndarray, op: str, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    _check(out, op)
    # ops already produce float64 arrays, so skip Tensor.__init__'s coercion
    t = Tensor.__new__(Tensor)
    t.data = out if type(out) is np.ndarray and out.dtype == DTYPE else np.asarray(out, dtype=DTYPE)
    t.grad = None
    t.op = op
    t.name = None
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        t.requires_grad, t.parents, t._backward = True, parents, backward_fn
    else:
        t.requires_grad, t.parents, t._backward = False, (), None
    return t


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast adjoint back down to ``shape``."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    sa, sb = a.data.shape, b.data.shape
    if sa == sb or not sa or not sb:
        return
    if not _broadcastable(sa, sb):
        raise ShapeError(f"{op}: incompatible shapes {sa} and {sb}")


@functools.lru_cache(maxsize=4096)
def _broadcastable(sa: tuple[int, ...], sb: tuple[int, ...]) -> bool:
    try:
        np.broadcast_shapes(sa, sb)
    except ValueError:
        return False
    return True


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "add")
    out = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, "add", (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "sub")
    out = a.data - b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(out, "sub", (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "mul")
    out = a.data * b.data

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(out, "mul", (a, b), bw)


def div(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "div")
    out = a.data / b.data

    def bw(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return _make(out, "div", (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    return _make(a.data * c, "scale", (a,), lambda g: (g * c,))


def mask_mul(a: Tensor, mask: np.ndarray) -> Tensor:
    """Multiply by a constant (non-differentiable) mask."""
    mask = np.asarray(mask, dtype=DTYPE)
    if np.broadcast_shapes(a.shape, mask.shape) != a.shape:
        raise ShapeError(f"mask_mul: mask {mask.shape} does not broadcast to {a.shape}")
    return _make(a.data * mask, "mask_mul", (a,), lambda g: (_unbroadcast(g * mask, a.shape),))


def square(a: Tensor) -> Tensor:
    return _make(a.data * a.data, "square", (a,), lambda g: (2.0 * a.data * g,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _make(out, "sqrt", (a,), lambda g: (g * 0.5 / out,))


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)
    return _make(out, "relu", (a,), lambda g: (g * (out > 0),))


def sigmoid(a: Tensor) -> Tensor:
    out = stable_sigmoid(a.data)
    return _make(out, "sigmoid", (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)) computed as logaddexp(0, x)."""
    out = np.logaddexp(0.0, a.data)
    return _make(out, "softplus", (a,), lambda g: (g * stable_sigmoid(a.data),))


def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def dropout(a: Tensor, rate: float, train: bool, rng=None) -> Tensor:
    """Inverted dropout; identity when ``train`` is False or rate is 0."""
    if not train or rate == 0.0:
        return a
    if rng is None:
        raise ValueError("dropout in train mode needs an rng")
    keep = 1.0 - rate
    mask = (rng.random(a.shape) < keep) / keep
    return _make(a.data * mask, "dropout", (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.asarray(out), "sum", (a,), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return scale(sum_(a, axis, keepdims), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)
    return _make(out, "reshape", (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    out = a.data.transpose(axes)
    inv = None if axes is None else np.argsort(axes)
    return _make(out, "transpose", (a,), lambda g: (np.transpose(g, inv),))


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    out = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, "concat", tuple(tensors), bw)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    """``a[start:stop]`` along the leading axis."""
    out = a.data[start:stop]

    def bw(g):
        full = np.zeros(a.shape, dtype=DTYPE)
        full[start:stop] = g
        return (full,)

    return _make(out, "slice_rows", (a,), bw)


# ---------------------------------------------------------------------------
# linear algebra and nn building blocks
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[-1] != b.shape[-2 if b.data.ndim > 1 else 0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    if b.data.ndim == 2 and a.data.ndim > 2:
        # stacked rows times one weight matrix: a single 2-D GEMM each way
        K, N = b.shape
        a2 = a.data.reshape(-1, K)
        out = (a2 @ b.data).reshape(a.shape[:-1] + (N,))

        def bw(g):
            g2 = g.reshape(-1, N)
            return (g2 @ b.data.T).reshape(a.shape), a2.T @ g2

        return _make(out, "matmul", (a, b), bw)
    out = np.matmul(a.data, b.data)

    def bw(g):
        if b.data.ndim == 1:
            ga = g[..., None] * b.data
            gb = np.tensordot(g, a.data, axes=(tuple(range(g.ndim)), tuple(range(g.ndim))))
            return ga, gb
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, "matmul", (a, b), bw)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    z = a.data - a.data.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    out = ez / ez.sum(axis=-1, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _make(out, "softmax", (a,), bw)


def gather(table: Tensor, index: np.ndarray) -> Tensor:
    """Row select ``table[index]``; the adjoint scatter-adds into the table."""
    index = np.asarray(index, dtype=np.int64)
    n = table.shape[0]
    if index.size and (index.min() < 0 or index.max() >= n):
        raise IndexError(f"gather index out of range [0, {n})")
    out = table.data[index]

    def bw(g):
        flat = index.reshape(-1)
        grows = g.reshape(flat.size, -1)
        acc = np.zeros((n, grows.shape[1]), dtype=DTYPE)
        np.add.at(acc, flat, grows)
        return (acc.reshape(table.shape),)

    return _make(out, "gather", (table,), bw)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = matmul(x, w)
    return y if b is None else add(y, b)


# ---------------------------------------------------------------------------
# graph traversal
# ---------------------------------------------------------------------------

def topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> dict[Tensor, np.ndarray]:
    """Accumulate d loss / d node into ``.grad`` of every reachable node.

    Returns a map from each parameter (leaf with ``requires_grad``) to its
    adjoint. Parameters in ``params`` that the loss does not reach get zeros.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = topological_order(loss)
    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node.parents, grads):
            if not parent.requires_grad or g is None:
                continue
            # never accumulate in place: adjoint arrays may be shared between parents
            parent.grad = g if parent.grad is None else parent.grad + g
    leaves = {n: n.grad for n in order if n.op == "leaf"}
    if params is not None:
        out = {}
        for p in params:
            g = leaves.get(p)
            out[p] = np.zeros_like(p.data) if g is None else g
            p.grad = out[p]
        return out
    return leaves


def evaluate(fn: Callable[..., Tensor], bindings: Mapping[str, np.ndarray | Tensor]) -> dict[str, Tensor]:
    """Run a graph-building function on named input bindings.

    Raw arrays are bound as differentiable leaves so the whole graph is
    recorded. Returns every node reached from the output, keyed by ``name``
    when set and by ``"out"`` for the output itself.
    """
    inputs = {k: v if isinstance(v, Tensor) else parameter(v, name=k) for k, v in bindings.items()}
    out = fn(**inputs)
    nodes = {n.name: n for n in _all_nodes(out) if n.name}
    nodes["out"] = out
    return nodes


def _all_nodes(root: Tensor) -> list[Tensor]:
    seen, stack, out = set(), [root], []
    while stack:
        n = stack.pop()
        if id(n) in seen:
            continue
        seen.add(id(n))
        out.append(n)
        stack.extend(n.parents)
    return out


def finite_difference_check(loss_fn: Callable[[], Tensor], params: Iterable[Tensor],
                            eps: float = 1e-5) -> float:
    """Max over parameter entries of |analytic - central| / max(1, |analytic|).

    ``loss_fn`` must rebuild the graph from the current parameter values and
    be deterministic (fix any masks or dropout draws inside it).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    global CHECK_FINITE
    params = list(params)
    grads = backward(loss_fn(), params)
    # perturbed losses are tested for finiteness in the loop; skip the per-op scan
    prev, CHECK_FINITE = CHECK_FINITE, False
    try:
        return _fd_worst(loss_fn, params, grads, eps)
    finally:
        CHECK_FINITE = prev


def _fd_worst(loss_fn, params, grads, eps) -> float:
    worst = 0.0
    with no_grad():
        for p in params:
            flat = p.data.reshape(-1)
            analytic = grads[p].reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                up = loss_fn().item()
                flat[i] = orig - eps
                down = loss_fn().item()
                flat[i] = orig
                if not (np.isfinite(up) and np.isfinite(down)):
                    raise NonFiniteError("non-finite loss under perturbation")
                numeric = (up - down) / (2 * eps)
                worst = max(worst, abs(analytic[i] - numeric) / max(1.0, abs(analytic[i])))
    return worst


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """Bias-corrected Adam update, in place on ``params`` arrays."""
    if lr < 0:
        raise ValueError("lr must be nonnegative")
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"adam: grad {g.shape} vs param {p.shape} for {name}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        if lr == 0.0:
            continue
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return state


class Adam:
    """Thin stateful wrapper around :func:`adam_step` over named Tensors."""

    def __init__(self, params: Mapping[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.state = AdamState()

    def step(self, grads: Mapping[Tensor, np.ndarray]) -> None:
        arrays = {k: t.data for k, t in self.params.items()}
        g = {}
        for k, t in self.params.items():
            gk = grads.get(t)
            g[k] = np.zeros_like(t.data) if gk is None else gk
        adam_step(arrays, g, self.state, self.lr, self.beta1, self.beta2, self.eps)
