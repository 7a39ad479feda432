"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation builds a node that remembers its parents and a closure
mapping the output gradient to one gradient per parent.  ``backward`` walks
the graph once in reverse topological order.  Leaves created with
``requires_grad=True`` accumulate into ``.grad``; intermediate gradients
live only for the duration of a backward pass.

Binary elementwise operations accept equal shapes or a 0-d scalar operand.
Anything else must be broadcast explicitly with :func:`broadcast_to`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DimensionError, DomainError, NonFiniteError

Array = np.ndarray
BackwardFn = Callable[[Array], Sequence["Array | None"]]


class Tensor:
    """n-dimensional float64 array with an optional gradient."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor construction received non-finite values")
        self.data: Array = arr
        self.grad: Array | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self.op = "leaf"

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _result(cls, data: Array, parents: Sequence["Tensor"], op: str,
                backward: BackwardFn) -> "Tensor":
        data = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(data)):
            raise NonFiniteError(f"{op}: forward result contains NaN or Inf")
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        out.op = op
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    # -- introspection --------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> Array:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op!r}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operators ------------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def relu(self):
        return relu(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def square(self):
        return square(self)

    def sqrt(self):
        return sqrt(self)

    # -- autodiff -------------------------------------------------------------

    def backward(self, params: Sequence["Tensor"] | None = None) -> None:
        backward(self, params)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _topological_order(root: Tensor) -> list[Tensor]:
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
    return order


def backward(loss: Tensor, params: Sequence[Tensor] | None = None) -> None:
    """Populate ``.grad`` on every trainable leaf reachable from ``loss``.

    ``params`` lists tensors that should end up with a gradient even when
    the loss does not depend on them; those receive zeros.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if params is not None:
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
    if not loss.requires_grad:
        return
    order = _topological_order(loss)
    grads: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if not np.all(np.isfinite(pg)):
                raise NonFiniteError(f"{node.op}: backward produced NaN or Inf")
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# -- elementwise binary ------------------------------------------------------


def _binary_operands(a, b, op: str) -> tuple[Tensor, Tensor]:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ "
                             "(only scalar broadcasting is supported)")
    return a, b


def _reduce_to(g: Array, shape: tuple[int, ...]) -> Array:
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "add")
    return Tensor._result(a.data + b.data, (a, b), "add",
                          lambda g: (_reduce_to(g, a.shape), _reduce_to(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "sub")
    return Tensor._result(a.data - b.data, (a, b), "sub",
                          lambda g: (_reduce_to(g, a.shape), _reduce_to(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "mul")
    return Tensor._result(a.data * b.data, (a, b), "mul",
                          lambda g: (_reduce_to(g * b.data, a.shape),
                                     _reduce_to(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "div")
    if np.any(b.data == 0):
        raise DomainError("div: division by zero")
    out = a.data / b.data
    return Tensor._result(out, (a, b), "div",
                          lambda g: (_reduce_to(g / b.data, a.shape),
                                     _reduce_to(-g * out / b.data, b.shape)))


# -- elementwise unary -------------------------------------------------------


def neg(x) -> Tensor:
    x = as_tensor(x)
    return Tensor._result(-x.data, (x,), "neg", lambda g: (-g,))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return Tensor._result(out, (x,), "tanh", lambda g: (g * (1.0 - out * out),))


def _stable_sigmoid(z: Array) -> Array:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = _stable_sigmoid(x.data)
    return Tensor._result(out, (x,), "sigmoid", lambda g: (g * out * (1.0 - out),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return Tensor._result(np.where(mask, x.data, 0.0), (x,), "relu", lambda g: (g * mask,))


def exp(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    return Tensor._result(out, (x,), "exp", lambda g: (g * out,))


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise DomainError("log: argument must be strictly positive")
    return Tensor._result(np.log(x.data), (x,), "log", lambda g: (g / x.data,))


def square(x) -> Tensor:
    x = as_tensor(x)
    return Tensor._result(x.data * x.data, (x,), "square", lambda g: (2.0 * g * x.data,))


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data < 0):
        raise DomainError("sqrt: argument must be non-negative")
    out = np.sqrt(x.data)

    def _backward(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            return (g * 0.5 / out,)

    return Tensor._result(out, (x,), "sqrt", _backward)


ELEMENTWISE = {
    "add": add, "mul": mul, "tanh": tanh, "sigmoid": sigmoid, "relu": relu,
    "exp": exp, "log": log, "square": square, "sqrt": sqrt,
}


def elementwise(op: str, x, y=None) -> Tensor:
    """Dispatch one of the named elementwise operations."""
    try:
        fn = ELEMENTWISE[op]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op!r}") from None
    if op in ("add", "mul"):
        if y is None:
            raise ContractError(f"{op} needs two operands")
        return fn(x, y)
    return fn(x)


# -- reductions and shape ops ------------------------------------------------


def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def _backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return Tensor._result(out, (x,), "sum", _backward)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    count = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return tsum(x, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return Tensor._result(x.data.reshape(shape), (x,), "reshape",
                          lambda g: (g.reshape(x.shape),))


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    # contiguous copies keep later einsum/tensordot calls on fast paths
    out = np.ascontiguousarray(np.transpose(x.data, axes))
    inverse = None if axes is None else np.argsort(axes)
    return Tensor._result(out, (x,), "transpose",
                          lambda g: (np.ascontiguousarray(np.transpose(g, inverse)),))


def getitem(x, index) -> Tensor:
    x = as_tensor(x)
    out = x.data[index]

    idx = index if isinstance(index, tuple) else (index,)
    fancy = any(isinstance(i, (list, np.ndarray)) for i in idx)

    def _backward(g):
        full = np.zeros_like(x.data)
        if fancy:
            np.add.at(full, index, g)
        else:
            full[index] += g
        return (full,)

    return Tensor._result(np.array(out), (x,), "getitem", _backward)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in ts], axis=axis)
    return Tensor._result(out, ts, "concat", lambda g: tuple(np.split(g, splits, axis=axis)))


def broadcast_to(x, shape) -> Tensor:
    """Explicit numpy-style broadcast; the gradient sums the expanded axes."""
    x = as_tensor(x)
    shape = tuple(shape)
    out = np.broadcast_to(x.data, shape).copy()
    lead = len(shape) - x.ndim

    def _backward(g):
        g = g.sum(axis=tuple(range(lead))) if lead else g
        axes = tuple(i for i, n in enumerate(x.shape) if n == 1 and g.shape[i] != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
        return (g,)

    return Tensor._result(out, (x,), "broadcast", _backward)


# -- products -----------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Product of two 2-D tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return Tensor._result(a.data @ b.data, (a, b), "matmul",
                          lambda g: (g @ b.data.T, a.data.T @ g))


def bmm(a, b) -> Tensor:
    """Batched product of 3-D tensors sharing the leading (batch) axis."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise DimensionError(f"bmm: cannot multiply {a.shape} by {b.shape}")
    return Tensor._result(np.matmul(a.data, b.data), (a, b), "bmm",
                          lambda g: (np.matmul(g, b.data.transpose(0, 2, 1)),
                                     np.matmul(a.data.transpose(0, 2, 1), g)))


def einsum(subscripts: str, a, b) -> Tensor:
    """Two-operand ``np.einsum`` with gradients.

    Every index of each operand must appear in the output or in the other
    operand (no index summed within a single operand).
    """
    a, b = as_tensor(a), as_tensor(b)
    lhs, out_idx = subscripts.replace(" ", "").split("->")
    ia, ib = lhs.split(",")
    for own, other in ((ia, ib), (ib, ia)):
        for ch in own:
            if ch not in out_idx and ch not in other:
                raise ContractError(f"einsum: index {ch!r} summed within one operand")
    try:
        out = np.einsum(subscripts, a.data, b.data, optimize=True)
    except ValueError as exc:
        raise DimensionError(f"einsum {subscripts}: {exc}") from None

    def _backward(g):
        ga = np.einsum(f"{out_idx},{ib}->{ia}", g, b.data, optimize=True) if a.requires_grad else None
        gb = np.einsum(f"{out_idx},{ia}->{ib}", g, a.data, optimize=True) if b.requires_grad else None
        return ga, gb

    return Tensor._result(out, (a, b), "einsum", _backward)


def conv2d(x, w, stride: int = 1) -> Tensor:
    """Valid cross-correlation of ``x`` (B, C, H, W) with ``w`` (O, C, kh, kw)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise DimensionError(f"conv2d: input {x.shape} incompatible with kernel {w.shape}")
    kh, kw = w.shape[2:]
    if x.shape[2] < kh or x.shape[3] < kw:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than input {x.shape[2:]}")
    s = int(stride)
    win = sliding_window_view(x.data, (kh, kw), axis=(2, 3))[:, :, ::s, ::s]
    bsz, chans, ho, wo = win.shape[:4]
    n_out = w.shape[0]
    # im2col: one contiguous (B*ho*wo, C*kh*kw) copy shared by forward and backward
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(bsz * ho * wo, chans * kh * kw)
    wmat = w.data.reshape(n_out, -1)
    out = (cols @ wmat.T).reshape(bsz, ho, wo, n_out).transpose(0, 3, 1, 2)

    def _backward(g):
        gflat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, n_out)
        gw = (gflat.T @ cols).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (gflat @ wmat).reshape(bsz, ho, wo, chans, kh, kw)
            gcols = np.ascontiguousarray(gcols.transpose(0, 3, 4, 5, 1, 2))
            gx = np.zeros_like(x.data)
            for i in range(kh):
                for j in range(kw):
                    gx[:, :, i:i + s * ho:s, j:j + s * wo:s] += gcols[:, :, i, j]
        return gx, gw

    return Tensor._result(np.ascontiguousarray(out), (x, w), "conv2d", _backward)


# -- normalisation -------------------------------------------------------------


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def _backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._result(out, (x,), "softmax", _backward)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)
    return Tensor._result(out, (x,), "log_softmax",
                          lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def norm(x, axis: int = -1) -> Tensor:
    """Euclidean norm along ``axis``; the gradient at the origin is taken as 0."""
    x = as_tensor(x)
    out = np.sqrt((x.data * x.data).sum(axis=axis))

    def _backward(g):
        n = np.expand_dims(out, axis)
        safe = np.where(n > 0, n, 1.0)
        return (np.expand_dims(g, axis) * np.where(n > 0, x.data / safe, 0.0),)

    return Tensor._result(out, (x,), "norm", _backward)


def cross_entropy(logits, targets: Sequence[int]) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` under softmax(logits)."""
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=int)
    onehot = np.zeros(logits.shape)
    onehot[np.arange(len(targets)), targets] = 1.0
    return -(log_softmax(logits, axis=1) * Tensor(onehot)).sum() * (1.0 / len(targets))


def linear(x, w, b=None) -> Tensor:
    out = matmul(x, w)
    if b is not None:
        out = out + broadcast_to(b, out.shape)
    return out


# -- parameters and optimisation -------------------------------------------------


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> Tensor:
    """Uniform on +-sqrt(6 / (fan_in + fan_out))."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


@dataclass
class AdamState:
    step: int = 0
    m: list[Array] = field(default_factory=list)
    v: list[Array] = field(default_factory=list)


def adaptive_moment_step(params: Sequence[Array], grads: Sequence[Array], state: AdamState,
                         lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                         eps: float = 1e-8) -> tuple[list[Array], AdamState]:
    """One bias-corrected Adam update.  Returns new parameter arrays and state."""
    if len(params) != len(grads):
        raise DimensionError("adam: parameter and gradient lists differ in length")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise DimensionError(f"adam: gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("adam: non-finite gradient, update rejected")
    m = state.m or [np.zeros_like(p) for p in params]
    v = state.v or [np.zeros_like(p) for p in params]
    if any(mi.shape != p.shape for mi, p in zip(m, params)):
        raise DimensionError("adam: optimizer state does not match parameters")
    t = state.step + 1
    new_params, new_m, new_v = [], [], []
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, g, mi, vi in zip(params, grads, m, v):
        mi = beta1 * mi + (1.0 - beta1) * g
        vi = beta2 * vi + (1.0 - beta2) * g * g
        new_params.append(p - lr * (mi / c1) / (np.sqrt(vi / c2) + eps))
        new_m.append(mi)
        new_v.append(vi)
    return new_params, AdamState(step=t, m=new_m, v=new_v)


class Adam:
    """Stateful wrapper applying :func:`adaptive_moment_step` to tensors in place."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = AdamState()

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        new, self.state = adaptive_moment_step([p.data for p in self.params], grads, self.state,
                                               self.lr, self.beta1, self.beta2, self.eps)
        for p, arr in zip(self.params, new):
            p.data = arr
