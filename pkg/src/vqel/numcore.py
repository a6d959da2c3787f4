"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every differentiable operation returns a new :class:`Tensor` that remembers
its parents and a closure that pushes the output gradient back to them.
Calling :func:`backward` on a scalar loss builds a :class:`Tape` (the
topologically ordered set of nodes reachable from the loss) and runs the
closures in reverse order, so each node is visited exactly once.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    DegenerateInputError,
    DimensionError,
    DomainError,
    NumericalError,
    ParameterError,
    UsageError,
)

NORM_EPS = 1e-12

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Run the enclosed block without recording a graph."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.op = "leaf"
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    out.name = None
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if g.shape != t.data.shape:
        g = _unbroadcast(g, t.data.shape)
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def bw(g):
        _accum(a, g)
        _accum(b, g)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def bw(g):
        _accum(a, g)
        _accum(b, -g)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def bw(g):
        if a.requires_grad:
            _accum(a, g * b.data)
        if b.requires_grad:
            _accum(b, g * a.data)

    return _make(a.data * b.data, (a, b), bw, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def bw(g):
        _accum(a, g * c)

    return _make(a.data * c, (a,), bw, "scale")


def square(a: Tensor) -> Tensor:
    def bw(g):
        _accum(a, 2.0 * g * a.data)

    return _make(a.data * a.data, (a,), bw, "square")


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def bw(g):
        _accum(a, g * (1.0 - y * y))

    return _make(y, (a,), bw, "tanh")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.data)

    def bw(g):
        _accum(a, g * y * (1.0 - y))

    return _make(y, (a,), bw, "sigmoid")


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)

    def bw(g):
        _accum(a, g * y)

    return _make(y, (a,), bw, "exp")


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise DomainError("log of non-positive input")

    def bw(g):
        _accum(a, g / a.data)

    return _make(np.log(a.data), (a,), bw, "log")


def softplus(a: Tensor) -> Tensor:
    x = a.data
    y = np.logaddexp(0.0, x)

    def bw(g):
        _accum(a, g * _sigmoid(x))

    return _make(y, (a,), bw, "softplus")


def reciprocal(a: Tensor) -> Tensor:
    if np.any(a.data == 0.0):
        raise DomainError("reciprocal of zero")
    y = 1.0 / a.data

    def bw(g):
        _accum(a, -g * y * y)

    return _make(y, (a,), bw, "reciprocal")


# ---------------------------------------------------------------------------
# linear algebra and shape
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def bw(g):
        if a.requires_grad:
            _accum(a, g @ b.data.T)
        if b.requires_grad:
            _accum(b, a.data.T @ g)

    return _make(a.data @ b.data, (a, b), bw, "matmul")


def transpose(a: Tensor) -> Tensor:
    def bw(g):
        _accum(a, g.T)

    return _make(a.data.T, (a,), bw, "transpose")


def reshape(a: Tensor, shape) -> Tensor:
    def bw(g):
        _accum(a, g.reshape(a.shape))

    return _make(a.data.reshape(shape), (a,), bw, "reshape")


def slice_(a: Tensor, index) -> Tensor:
    def bw(g):
        full = np.zeros_like(a.data)
        full[index] = g
        _accum(a, full)

    return _make(a.data[index], (a,), bw, "slice")


def take_rows(table: Tensor, idx) -> Tensor:
    """Embedding lookup: ``table[idx]`` with scatter-add backward."""
    idx = np.asarray(idx, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise DimensionError(f"row index out of range for table with {table.shape[0]} rows")

    def bw(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        _accum(table, full)

    return _make(table.data[idx], (table,), bw, "take_rows")


def pick(a: Tensor, idx) -> Tensor:
    """Select ``a[i, idx[i]]`` for every row i of a 2-D tensor."""
    idx = np.asarray(idx, dtype=np.intp)
    rows = np.arange(a.shape[0])

    def bw(g):
        full = np.zeros_like(a.data)
        full[rows, idx] = g
        _accum(a, full)

    return _make(a.data[rows, idx], (a,), bw, "pick")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accum(t, piece)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def bw(g):
        for i, t in enumerate(tensors):
            _accum(t, np.take(g, i, axis=axis))

    return _make(np.stack([t.data for t in tensors], axis=axis), tensors, bw, "stack")


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.shape))

    return _make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), bw, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.size if axis is None else a.shape[axis]
    return scale(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# normalisations
# ---------------------------------------------------------------------------


def _check_temperature(temperature: float) -> float:
    temperature = float(temperature)
    if not temperature > 0.0:
        raise ParameterError(f"temperature must be positive, got {temperature}")
    return temperature


def softmax(x: Tensor, temperature: float = 1.0, axis: int = -1) -> Tensor:
    tau = _check_temperature(temperature)
    s = x.data / tau
    s = s - s.max(axis=axis, keepdims=True)
    e = np.exp(s)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        _accum(x, y * (g - (g * y).sum(axis=axis, keepdims=True)) / tau)

    return _make(y, (x,), bw, "softmax")


def log_softmax(x: Tensor, temperature: float = 1.0, axis: int = -1) -> Tensor:
    tau = _check_temperature(temperature)
    s = x.data / tau
    s = s - s.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(s).sum(axis=axis, keepdims=True))
    y = s - lse

    def bw(g):
        p = np.exp(y)
        _accum(x, (g - p * g.sum(axis=axis, keepdims=True)) / tau)

    return _make(y, (x,), bw, "log_softmax")


def l2_normalize(x: Tensor, axis: int = -1) -> Tensor:
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    if np.any(norm <= NORM_EPS):
        raise DegenerateInputError("cannot normalise a (near-)zero vector")
    y = x.data / norm

    def bw(g):
        _accum(x, (g - y * (g * y).sum(axis=axis, keepdims=True)) / norm)

    return _make(y, (x,), bw, "l2_normalize")


# ---------------------------------------------------------------------------
# gradient routing
# ---------------------------------------------------------------------------


def stop_gradient(a: Tensor) -> Tensor:
    return Tensor(a.data)


def straight_through(discrete, continuous: Tensor) -> Tensor:
    """Forward value of ``discrete``; backward copies the gradient to ``continuous``."""
    discrete = as_tensor(discrete)
    if discrete.shape != continuous.shape:
        raise DimensionError(
            f"straight_through: shapes differ {discrete.shape} vs {continuous.shape}"
        )

    def bw(g):
        _accum(continuous, g)

    return _make(discrete.data, (continuous,), bw, "straight_through")


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


class Tape:
    """Nodes reachable from a root, in topological order (inputs first)."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_root(cls, root: Tensor) -> Tape:
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
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)

    def run(self) -> None:
        for node in reversed(self.nodes):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def backward(loss: Tensor) -> Tape:
    """Populate ``.grad`` on every tensor that ``loss`` depends on."""
    if loss.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise UsageError("loss does not depend on any tensor that requires grad")
    tape = Tape.from_root(loss)
    loss.grad = np.ones_like(loss.data)
    tape.run()
    return tape


def check_finite(tensors: Iterable[Tensor], what: str = "tensor") -> None:
    """Debug pass: raise if any value or populated gradient is NaN/Inf."""
    for t in tensors:
        if not np.all(np.isfinite(t.data)):
            raise NumericalError(f"non-finite value in {t.name or what}")
        if t.grad is not None and not np.all(np.isfinite(t.grad)):
            raise NumericalError(f"non-finite gradient in {t.name or what}")


# ---------------------------------------------------------------------------
# optimisation
# ---------------------------------------------------------------------------

BETA1 = 0.9
BETA2 = 0.999
ADAM_EPS = 1e-8


def adam_step(
    params: Sequence[Tensor],
    grads: Sequence[np.ndarray | None],
    state: dict,
    lr: float,
    weight_decay: float = 0.0,
) -> None:
    """One Adam update with decoupled weight decay.

    ``state`` holds ``t`` plus first/second moment lists aligned with
    ``params``; it is created on first use. Parameters whose gradient is
    ``None`` are left untouched (no decay either).
    """
    if not lr > 0.0:
        raise ParameterError(f"learning rate must be positive, got {lr}")
    if "m" not in state:
        state["t"] = 0
        state["m"] = [np.zeros_like(p.data) for p in params]
        state["v"] = [np.zeros_like(p.data) for p in params]
    state["t"] += 1
    t = state["t"]
    c1 = 1.0 - BETA1**t
    c2 = 1.0 - BETA2**t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        if state["m"][i].shape != p.data.shape:
            raise DimensionError(f"optimizer state for parameter {i} has wrong shape")
        m = BETA1 * state["m"][i] + (1.0 - BETA1) * g
        v = BETA2 * state["v"][i] + (1.0 - BETA2) * (g * g)
        state["m"][i] = m
        state["v"][i] = v
        data = p.data
        if weight_decay:
            data = data - lr * weight_decay * data
        p.data = data - lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, weight_decay: float = 0.0):
        if not lr > 0.0:
            raise ParameterError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.state: dict = {}

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state, self.lr, self.weight_decay)

    def state_dict(self) -> dict:
        if "m" not in self.state:
            return {"t": 0}
        return {"t": self.state["t"], "m": list(self.state["m"]), "v": list(self.state["v"])}

    def load_state_dict(self, state: dict) -> None:
        if state.get("t", 0) == 0:
            self.state = {}
            return
        self.state = {"t": int(state["t"]), "m": [np.array(x) for x in state["m"]],
                      "v": [np.array(x) for x in state["v"]]}


# ---------------------------------------------------------------------------
# numerical gradient checking
# ---------------------------------------------------------------------------


def numerical_grad(f: Callable[[], float], x: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Central finite differences of scalar ``f`` w.r.t. array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + step
        fp = f()
        x[i] = orig - step
        fm = f()
        x[i] = orig
        g[i] = (fp - fm) / (2.0 * step)
    return g


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-12) -> float:
    """max|a - b| / max(max|a|, max|b|): the worst error relative to the gradient's scale."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if not a.size:
        return 0.0
    scale_ = max(float(np.max(np.abs(a))), float(np.max(np.abs(b))), floor)
    return float(np.max(np.abs(a - b))) / scale_
