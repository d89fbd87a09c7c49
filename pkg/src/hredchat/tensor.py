"""Dense float64 tensors with taped reverse-mode differentiation.

Values live in numpy arrays; structure lives in a plain-Python tape.  A
``Graph`` records every operation applied while it is active (inside its
``with`` block), in creation order, which for a dynamically built graph is
already a topological order.  ``Graph.backward`` walks the tape once in
reverse and fills a gradient store keyed by node id.  Ops applied while no
graph is active only compute values, so inference pays no tape cost.

Everything is 64-bit: the models here are desk-scale, and the finite
difference tolerances used throughout the test suite require it.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Graph",
    "Rng",
    "ShapeMismatch",
    "NonFiniteInput",
    "DomainError",
    "GraphStateError",
    "apply",
    "add",
    "sub",
    "mul",
    "matmul",
    "tanh",
    "sigmoid",
    "concat",
    "slice_",
    "pick",
    "col",
    "softmax",
    "log_softmax",
    "log",
    "sum_",
    "mean",
    "square",
    "sqrt",
    "maximum",
    "constant",
    "zeros",
    "gaussian_init",
    "orthogonal_init",
]


class ShapeMismatch(ValueError):
    """Input shapes are incompatible with the requested op."""


class NonFiniteInput(ValueError):
    """An op received NaN or +/-Inf input values."""


class DomainError(ValueError):
    """An op received values outside its mathematical domain."""


class GraphStateError(RuntimeError):
    """backward() misuse: non-scalar loss, foreign node, or consumed tape."""


class Tensor:
    """A dense float64 array that ops treat as an immutable value.

    Ops never write to their inputs; every op allocates a fresh output.
    The training loop is the single sanctioned writer: it replaces
    ``.data`` on parameter leaves between graphs.
    """

    __slots__ = ("data",)

    def __init__(self, data):
        self.data = np.array(data, dtype=np.float64)

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = object.__new__(cls)
        t.data = arr
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __add__(self, other):
        return add(self, _coerce(other))

    def __radd__(self, other):
        return add(_coerce(other), self)

    def __sub__(self, other):
        return sub(self, _coerce(other))

    def __rsub__(self, other):
        return sub(_coerce(other), self)

    def __mul__(self, other):
        return mul(self, _coerce(other))

    def __rmul__(self, other):
        return mul(_coerce(other), self)

    def __matmul__(self, other):
        return matmul(self, _coerce(other))

    def __neg__(self):
        return mul(self, _NEG_ONE)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, data={self.data!r})"


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    """A leaf tensor holding a fixed value."""
    return Tensor(x)


def zeros(shape) -> Tensor:
    return Tensor._wrap(np.zeros(shape, dtype=np.float64))


# --------------------------------------------------------------------------
# Tape
# --------------------------------------------------------------------------

class _Node:
    __slots__ = ("kind", "inputs", "out", "bwd")

    def __init__(self, kind, inputs, out, bwd):
        self.kind = kind
        self.inputs = inputs  # tuple of node indices
        self.out = out        # the output Tensor (leaves: the tensor itself)
        self.bwd = bwd        # callable(grad_out) -> tuple of input grads


_tls = threading.local()


def _stack() -> list:
    s = getattr(_tls, "graphs", None)
    if s is None:
        s = []
        _tls.graphs = s
    return s


def _active() -> "Graph | None":
    s = _stack()
    return s[-1] if s else None


class Graph:
    """Tape of recorded operations for one forward pass.

    Nodes appear in creation order; every node's inputs precede it.  A graph
    is single-use: ``backward`` may run once, after which the gradient store
    can be queried through :meth:`grad`.  Graphs on distinct threads are
    independent (the active-graph stack is thread local).
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._index: dict[int, int] = {}  # id(tensor) -> node index
        self._grads: dict[int, np.ndarray] | None = None
        self._consumed = False

    def __enter__(self) -> "Graph":
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        return False

    def __len__(self) -> int:
        return len(self._nodes)

    def _register(self, t: Tensor) -> int:
        idx = self._index.get(id(t))
        if idx is None:
            idx = len(self._nodes)
            self._nodes.append(_Node("leaf", (), t, None))
            self._index[id(t)] = idx
        return idx

    def _record(self, kind: str, out: Tensor, inputs: Sequence[Tensor], bwd) -> None:
        in_idx = tuple(self._register(t) for t in inputs)
        idx = len(self._nodes)
        self._nodes.append(_Node(kind, in_idx, out, bwd))
        self._index[id(out)] = idx

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Populate the gradient store from a scalar loss node.

        Returns the store (node id -> gradient array).  The gradient of the
        loss w.r.t. itself is 1.  Only ancestors of the loss receive entries;
        :meth:`grad` reports zeros for everything else.
        """
        if self._consumed:
            raise GraphStateError("graph already consumed by backward()")
        idx = self._index.get(id(loss))
        if idx is None:
            raise GraphStateError("loss is not a node of this graph")
        if loss.data.shape != ():
            raise GraphStateError(f"loss must be scalar, got shape {loss.data.shape}")
        grads: dict[int, np.ndarray] = {idx: np.ones(())}
        nodes = self._nodes
        for i in range(idx, -1, -1):
            g = grads.get(i)
            if g is None:
                continue
            node = nodes[i]
            if node.bwd is None:
                continue
            for j, gin in zip(node.inputs, node.bwd(g)):
                if gin is None:
                    continue
                prev = grads.get(j)
                # out-of-place: backward rules may return aliases of g
                grads[j] = gin if prev is None else prev + gin
        self._grads = grads
        self._consumed = True
        return grads

    def grad(self, t: Tensor) -> np.ndarray:
        """Gradient of the loss w.r.t. ``t`` (zeros if the loss never saw it)."""
        if self._grads is None:
            raise GraphStateError("backward() has not run on this graph")
        idx = self._index.get(id(t))
        if idx is None:
            return np.zeros(t.data.shape)
        g = self._grads.get(idx)
        return np.zeros(t.data.shape) if g is None else g


# --------------------------------------------------------------------------
# Ops
# --------------------------------------------------------------------------

def _check_finite(kind: str, arrays) -> None:
    for a in arrays:
        if not np.isfinite(a).all():
            raise NonFiniteInput(f"{kind}: non-finite input values")


def _broadcast_shape(kind, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"{kind}: cannot broadcast {a.shape} with {b.shape}") from None


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _op_add(xs, at):
    a, b = xs
    _broadcast_shape("add", a, b)
    out = a + b

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return out, bwd


def _op_sub(xs, at):
    a, b = xs
    _broadcast_shape("sub", a, b)
    out = a - b

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return out, bwd


def _op_mul(xs, at):
    a, b = xs
    _broadcast_shape("mul", a, b)
    out = a * b

    def bwd(g):
        return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)

    return out, bwd


def _op_matmul(xs, at):
    a, b = xs
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise ShapeMismatch(f"matmul: only 1-D/2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != (b.shape[0] if b.ndim >= 1 else None):
        raise ShapeMismatch(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    out = a @ b

    def bwd(g):
        if a.ndim == 2 and b.ndim == 2:
            return g @ b.T, a.T @ g
        if a.ndim == 2 and b.ndim == 1:
            return np.outer(g, b), a.T @ g
        if a.ndim == 1 and b.ndim == 2:
            return b @ g, np.outer(a, g)
        return g * b, g * a  # 1-D dot

    return out, bwd


def _op_tanh(xs, at):
    (x,) = xs
    out = np.tanh(x)

    def bwd(g):
        return (g * (1.0 - out * out),)

    return out, bwd


def _op_sigmoid(xs, at):
    (x,) = xs
    out = 0.5 * (np.tanh(0.5 * x) + 1.0)  # overflow-free logistic

    def bwd(g):
        return (g * out * (1.0 - out),)

    return out, bwd


def _op_concat(xs, at):
    for x in xs:
        if x.ndim != 1:
            raise ShapeMismatch(f"concat: 1-D inputs only, got {x.shape}")
    out = np.concatenate(xs)
    sizes = [x.shape[0] for x in xs]

    def bwd(g):
        outs = []
        off = 0
        for n in sizes:
            outs.append(g[off:off + n])
            off += n
        return tuple(outs)

    return out, bwd


def _op_slice(xs, at):
    (x,) = xs
    start, stop = at["start"], at["stop"]
    if x.ndim != 1:
        raise ShapeMismatch(f"slice: 1-D input only, got {x.shape}")
    if not (0 <= start <= stop <= x.shape[0]):
        raise ShapeMismatch(f"slice: range [{start}:{stop}] out of bounds for {x.shape}")
    out = x[start:stop].copy()

    def bwd(g):
        gx = np.zeros_like(x)
        gx[start:stop] = g
        return (gx,)

    return out, bwd


def _op_pick(xs, at):
    (x,) = xs
    i = at["index"]
    if x.ndim != 1:
        raise ShapeMismatch(f"pick: 1-D input only, got {x.shape}")
    if not (0 <= i < x.shape[0]):
        raise ShapeMismatch(f"pick: index {i} out of bounds for {x.shape}")
    out = np.array(x[i])

    def bwd(g):
        gx = np.zeros_like(x)
        gx[i] = g
        return (gx,)

    return out, bwd


def _op_col(xs, at):
    (x,) = xs
    j = at["index"]
    if x.ndim != 2:
        raise ShapeMismatch(f"col: 2-D input only, got {x.shape}")
    if not (0 <= j < x.shape[1]):
        raise ShapeMismatch(f"col: column {j} out of bounds for {x.shape}")
    out = x[:, j].copy()

    def bwd(g):
        gx = np.zeros_like(x)
        gx[:, j] = g
        return (gx,)

    return out, bwd


def _op_softmax(xs, at):
    (x,) = xs
    if x.ndim != 1:
        raise ShapeMismatch(f"softmax: 1-D input only, got {x.shape}")
    e = np.exp(x - x.max())
    out = e / e.sum()

    def bwd(g):
        return (out * (g - np.dot(g, out)),)

    return out, bwd


def _op_log_softmax(xs, at):
    (x,) = xs
    if x.ndim != 1:
        raise ShapeMismatch(f"log_softmax: 1-D input only, got {x.shape}")
    m = x.max()
    out = x - (m + np.log(np.exp(x - m).sum()))

    def bwd(g):
        return (g - np.exp(out) * g.sum(),)

    return out, bwd


def _op_log(xs, at):
    (x,) = xs
    if (x <= 0.0).any():
        raise DomainError("log: requires strictly positive input")
    out = np.log(x)

    def bwd(g):
        return (g / x,)

    return out, bwd


def _op_sum(xs, at):
    (x,) = xs
    out = np.array(x.sum())

    def bwd(g):
        return (np.full(x.shape, float(g)),)

    return out, bwd


def _op_mean(xs, at):
    (x,) = xs
    out = np.array(x.mean())
    n = x.size

    def bwd(g):
        return (np.full(x.shape, float(g) / n),)

    return out, bwd


def _op_square(xs, at):
    (x,) = xs
    out = x * x

    def bwd(g):
        return (2.0 * x * g,)

    return out, bwd


def _op_sqrt(xs, at):
    # Differentiable only on positive input; the gradient at 0 is unbounded.
    (x,) = xs
    if (x < 0.0).any():
        raise DomainError("sqrt: requires non-negative input")
    out = np.sqrt(x)

    def bwd(g):
        return (g / (2.0 * out),)

    return out, bwd


def _op_max(xs, at):
    a, b = xs
    if a.shape != b.shape:
        raise ShapeMismatch(f"max: shapes differ, {a.shape} vs {b.shape}")
    mask = a >= b  # ties: first operand wins the subgradient
    out = np.where(mask, a, b)

    def bwd(g):
        return np.where(mask, g, 0.0), np.where(mask, 0.0, g)

    return out, bwd


def _op_embed(xs, at):
    # Fused X @ E[:, j]: one tape node per token lookup instead of two.
    x_mat, e_mat = xs
    j = at["index"]
    if x_mat.ndim != 2 or e_mat.ndim != 2 or x_mat.shape[1] != e_mat.shape[0]:
        raise ShapeMismatch(f"embed: incompatible factors {x_mat.shape} and {e_mat.shape}")
    if not (0 <= j < e_mat.shape[1]):
        raise ShapeMismatch(f"embed: token {j} out of range for table {e_mat.shape}")
    e_col = e_mat[:, j]
    out = x_mat @ e_col

    def bwd(g):
        ge = np.zeros_like(e_mat)
        ge[:, j] = x_mat.T @ g
        return np.outer(g, e_col), ge

    return out, bwd


def _op_gru(xs, at):
    """Fused GRU transition; the hot path of every model here.

    r = sigmoid(w_r x + u_r h + b_r)
    z = sigmoid(w_z x + u_z h + b_z)
    c = tanh(w_c x + u_c (r*h) + b_c)
    out = (1-z)*h + z*c
    """
    h, x, w_r, u_r, b_r, w_z, u_z, b_z, w_c, u_c, b_c = xs
    d = h.shape[0] if h.ndim == 1 else -1
    k = x.shape[0] if x.ndim == 1 else -1
    for name, m in (("w_r", w_r), ("w_z", w_z), ("w_c", w_c)):
        if m.shape != (d, k):
            raise ShapeMismatch(f"gru: {name} is {m.shape}, expected ({d}, {k})")
    for name, m in (("u_r", u_r), ("u_z", u_z), ("u_c", u_c)):
        if m.shape != (d, d):
            raise ShapeMismatch(f"gru: {name} is {m.shape}, expected ({d}, {d})")
    for name, v in (("b_r", b_r), ("b_z", b_z), ("b_c", b_c)):
        if v.shape != (d,):
            raise ShapeMismatch(f"gru: {name} is {v.shape}, expected ({d},)")
    r = 0.5 * (np.tanh(0.5 * (w_r @ x + u_r @ h + b_r)) + 1.0)
    z = 0.5 * (np.tanh(0.5 * (w_z @ x + u_z @ h + b_z)) + 1.0)
    rh = r * h
    c = np.tanh(w_c @ x + u_c @ rh + b_c)
    out = (1.0 - z) * h + z * c

    def bwd(g):
        da_c = (g * z) * (1.0 - c * c)
        drh = u_c.T @ da_c
        da_r = (drh * h) * (r * (1.0 - r))
        da_z = (g * (c - h)) * (z * (1.0 - z))
        gh = g * (1.0 - z) + drh * r + u_r.T @ da_r + u_z.T @ da_z
        gx = w_r.T @ da_r + w_z.T @ da_z + w_c.T @ da_c
        return (
            gh, gx,
            np.outer(da_r, x), np.outer(da_r, h), da_r,
            np.outer(da_z, x), np.outer(da_z, h), da_z,
            np.outer(da_c, x), np.outer(da_c, rh), da_c,
        )

    return out, bwd


_OPS: dict[str, Callable] = {
    "add": _op_add,
    "sub": _op_sub,
    "mul": _op_mul,
    "matmul": _op_matmul,
    "tanh": _op_tanh,
    "sigmoid": _op_sigmoid,
    "concat": _op_concat,
    "slice": _op_slice,
    "pick": _op_pick,
    "col": _op_col,
    "softmax": _op_softmax,
    "log_softmax": _op_log_softmax,
    "log": _op_log,
    "sum": _op_sum,
    "mean": _op_mean,
    "square": _op_square,
    "sqrt": _op_sqrt,
    "max": _op_max,
    "embed": _op_embed,
    "gru": _op_gru,
}


def apply(kind: str, inputs: Sequence[Tensor], **attrs) -> Tensor:
    """Apply the named op, recording it on the active graph if one exists.

    Inputs are never mutated.  Raises :class:`ShapeMismatch`,
    :class:`NonFiniteInput`, or :class:`DomainError` as appropriate.
    """
    op = _OPS.get(kind)
    if op is None:
        raise KeyError(f"unknown op kind {kind!r}")
    arrays = [t.data for t in inputs]
    _check_finite(kind, arrays)
    out_arr, bwd = op(arrays, attrs)
    out = Tensor._wrap(out_arr)
    g = _active()
    if g is not None:
        g._record(kind, out, inputs, bwd)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    return apply("add", (a, b))


def sub(a: Tensor, b: Tensor) -> Tensor:
    return apply("sub", (a, b))


def mul(a: Tensor, b: Tensor) -> Tensor:
    return apply("mul", (a, b))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return apply("matmul", (a, b))


def tanh(x: Tensor) -> Tensor:
    return apply("tanh", (x,))


def sigmoid(x: Tensor) -> Tensor:
    return apply("sigmoid", (x,))


def concat(parts: Sequence[Tensor]) -> Tensor:
    return apply("concat", tuple(parts))


def slice_(x: Tensor, start: int, stop: int) -> Tensor:
    return apply("slice", (x,), start=start, stop=stop)


def pick(x: Tensor, index: int) -> Tensor:
    """Scalar element of a vector, differentiable in the vector."""
    return apply("pick", (x,), index=index)


def col(x: Tensor, index: int) -> Tensor:
    """One column of a matrix; its gradient touches only that column."""
    return apply("col", (x,), index=index)


def softmax(x: Tensor) -> Tensor:
    return apply("softmax", (x,))


def log_softmax(x: Tensor) -> Tensor:
    return apply("log_softmax", (x,))


def log(x: Tensor) -> Tensor:
    return apply("log", (x,))


def sum_(x: Tensor) -> Tensor:
    return apply("sum", (x,))


def mean(x: Tensor) -> Tensor:
    return apply("mean", (x,))


def square(x: Tensor) -> Tensor:
    return apply("square", (x,))


def sqrt(x: Tensor) -> Tensor:
    return apply("sqrt", (x,))


def maximum(a: Tensor, b: Tensor) -> Tensor:
    return apply("max", (a, b))


_NEG_ONE = Tensor(-1.0)


# --------------------------------------------------------------------------
# Randomness and initialization
# --------------------------------------------------------------------------

_MASK64 = (1 << 64) - 1


class Rng:
    """Deterministic counter-based random source (Philox 4x64-10).

    The same seed yields the same draw sequence on every platform, which is
    what lets checkpoints and preprocessing hashes reproduce exactly.
    ``child`` derives an independent stream from (seed, stream-index), so
    per-epoch and per-session streams do not depend on draw history.
    """

    __slots__ = ("seed", "_gen")

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.Philox(key=self.seed & _MASK64))

    def child(self, stream: int) -> "Rng":
        seq = np.random.SeedSequence((self.seed & _MASK64, int(stream)))
        return Rng(int(seq.generate_state(1, np.uint64)[0]))

    def standard_normal(self, shape=()) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def random(self) -> float:
        return float(self._gen.random())

    def integers(self, low: int, high: int) -> int:
        return int(self._gen.integers(low, high))

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def categorical(self, p: np.ndarray) -> int:
        """Inverse-CDF draw from a probability vector."""
        u = self.random()
        idx = int(np.searchsorted(np.cumsum(p), u, side="right"))
        return min(idx, len(p) - 1)


def gaussian_init(shape, std: float, rng: Rng) -> Tensor:
    """I.i.d. zero-mean Gaussian draws with the given standard deviation."""
    if std <= 0:
        raise DomainError(f"gaussian_init: std must be positive, got {std}")
    return Tensor._wrap(rng.standard_normal(shape) * std)


def orthogonal_init(rows: int, cols: int, rng: Rng) -> Tensor:
    """Orthogonal matrix from the QR factorization of a Gaussian draw.

    The R diagonal's signs are folded into Q so the distribution is uniform
    (Haar) rather than biased by the QR convention.  For square outputs
    Q^T Q = I to machine precision; for rectangular outputs the short
    dimension is orthonormal.
    """
    if rows < 1 or cols < 1:
        raise DomainError(f"orthogonal_init: invalid dims ({rows}, {cols})")
    a = rng.standard_normal((rows, cols))
    if rows < cols:
        a = a.T
    q, r = np.linalg.qr(a)
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    q = q * d
    if rows < cols:
        q = q.T
    return Tensor._wrap(np.ascontiguousarray(q))
