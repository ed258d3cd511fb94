"""Define-by-run reverse-mode autodiff over float64 numpy arrays.

Operations record onto the innermost active :class:`Tape` whenever one of
their inputs requires a gradient. Tensors are never mutated by operations;
optimizers swap a parameter's ``data`` array for a fresh one.

Shapes follow numpy conventions, so a column vector is ``(d, 1)`` and a batch
of row vectors is ``(m, d)``. ``matmul`` broadcasts over leading axes.
"""

from __future__ import annotations

import logging
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels

logger = logging.getLogger(__name__)

EPS = 1e-12

_TAPES: list["Tape"] = []


class ShapeError(ValueError):
    pass


class ContractError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "node_id", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.node_id: int | None = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        return self.data.ravel()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Records operations in execution order and replays them backwards."""

    def __init__(self):
        self.ops: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._ids: dict[int, int] = {}

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.pop()
        return False

    def _register(self, t: Tensor):
        # parameters outlive tapes; an id is only meaningful on the tape that set it
        if id(t) not in self._ids:
            self._ids[id(t)] = t.node_id = len(self._ids)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward: Callable):
        for t in inputs:
            if t.requires_grad:
                self._register(t)
        self._register(out)
        self.ops.append((out, inputs, backward))

    def backward(self, loss: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
        """Gradients of a scalar ``loss`` with respect to each tensor in ``wrt``.

        Tensors the loss does not depend on get a zero gradient.
        """
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for out, inputs, rule in reversed(self.ops):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for t, gi in zip(inputs, rule(g)):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        return [grads.get(id(p), np.zeros_like(p.data)) for p in wrt]


def backward(tape: Tape, loss: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
    return tape.backward(loss, wrt)


def _emit(data: np.ndarray, inputs: tuple, rule: Callable) -> Tensor:
    req = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=req)
    if req and _TAPES:
        _TAPES[-1].record(out, inputs, rule)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- binary elementwise ------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    return _emit(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    return _emit(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    return _emit(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data
    return _emit(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


def maximum(a, b) -> Tensor:
    """Elementwise max; ties send the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "maximum")
    pick_a = a.data >= b.data
    return _emit(np.where(pick_a, a.data, b.data), (a, b),
                 lambda g: (_unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)))


# -- unary elementwise -------------------------------------------------------


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _emit(a.data * mask, (a,), lambda g: (g * mask,))


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    scale = np.where(a.data > 0, 1.0, slope)
    return _emit(a.data * scale, (a,), lambda g: (g * scale,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    return _emit(s, (a,), lambda g: (g * s * (1.0 - s),))


def log(a: Tensor) -> Tensor:
    """Natural log with the input clamped below at 1e-12."""
    live = a.data > EPS
    clamped = np.where(live, a.data, EPS)
    return _emit(np.log(clamped), (a,), lambda g: (g * live / clamped,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _emit(out, (a,), lambda g: (g * out,))


def square(a: Tensor) -> Tensor:
    return _emit(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _emit(out, (a,), lambda g: (g / (2.0 * np.maximum(out, EPS)),))


_UNARY = {"relu": relu, "sigmoid": sigmoid, "log": log, "square": square, "exp": exp}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(op: str, *args) -> Tensor:
    if op in _UNARY:
        if len(args) != 1:
            raise ContractError(f"{op} takes one argument")
        return _UNARY[op](as_tensor(args[0]))
    if op in _BINARY:
        if len(args) != 2:
            raise ContractError(f"{op} takes two arguments")
        a, b = as_tensor(args[0]), as_tensor(args[1])
        if a.shape != b.shape:
            raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")
        return _BINARY[op](a, b)
    raise ValueError(f"unknown elementwise op {op!r}")


# -- linear algebra and shape ------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def rule(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _emit(a.data @ b.data, (a, b), rule)


def transpose(a: Tensor, axes: tuple | None = None) -> Tensor:
    if axes is None:
        out = np.swapaxes(a.data, -1, -2)
        return _emit(out, (a,), lambda g: (np.swapaxes(g, -1, -2),))
    inv = np.argsort(axes)
    return _emit(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def reshape(a: Tensor, shape: tuple) -> Tensor:
    old = a.shape
    return _emit(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = a.shape

    def rule(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _emit(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), rule)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.shape[axis]
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def max(a: Tensor, axis: int = 0) -> Tensor:  # noqa: A001
    """Max along ``axis``; the gradient goes to the first maximal entry."""
    idx = np.argmax(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis)

    def rule(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (full,)

    return _emit(np.squeeze(out, axis=axis), (a,), rule)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    return _emit(np.concatenate([t.data for t in tensors], axis=axis), tensors,
                 lambda g: tuple(np.split(g, cuts, axis=axis)))


def vcat(a: Tensor, b: Tensor) -> Tensor:
    """Stack two column vectors vertically."""
    for t in (a, b):
        if t.data.ndim != 2 or t.shape[1] != 1:
            raise ShapeError(f"vcat expects column vectors, got {a.shape} and {b.shape}")
    return concat([a, b], axis=0)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    return _emit(np.stack([t.data for t in tensors], axis=axis), tensors,
                 lambda g: tuple(np.moveaxis(g, axis, 0)))


def take(a: Tensor, index, axis: int = 0) -> Tensor:
    """Gather along ``axis``; repeated indices accumulate in the backward pass."""
    index = np.asarray(index, dtype=np.int64)

    if axis != 0 and index.ndim != 1:
        raise ShapeError("take along a non-leading axis needs a 1-d index")

    def rule(g):
        full = np.zeros_like(a.data)
        if axis == 0:
            np.add.at(full, index, g)
        else:
            np.add.at(np.moveaxis(full, axis, 0), index, np.moveaxis(g, axis, 0))
        return (full,)

    return _emit(np.take(a.data, index, axis=axis), (a,), rule)


def softmax(a: Tensor, axis: int = 0) -> Tensor:
    if a.data.size == 0 or a.shape[axis] == 0:
        raise ShapeError(f"softmax of empty input, shape {a.shape}")
    z = np.exp(a.data - np.max(a.data, axis=axis, keepdims=True))
    y = z / np.sum(z, axis=axis, keepdims=True)
    return _emit(y, (a,), lambda g: (y * (g - np.sum(g * y, axis=axis, keepdims=True)),))


def softmax_vec(e: Tensor) -> Tensor:
    if e.data.ndim != 2 or e.shape[1] != 1 or e.shape[0] < 1:
        raise ShapeError(f"softmax_vec expects a non-empty column vector, got {e.shape}")
    return softmax(e, axis=0)


def l2_normalize(h: Tensor, axis: int = 0) -> Tensor:
    """h / max(||h||, 1e-12) along ``axis``."""
    norm = np.sqrt(np.sum(h.data * h.data, axis=axis, keepdims=True))
    live = norm > EPS
    denom = np.where(live, norm, EPS)
    y = h.data / denom

    def rule(g):
        # below the guard the denominator is a constant
        proj = np.sum(g * y, axis=axis, keepdims=True) * live
        return ((g - y * proj) / denom,)

    return _emit(y, (h,), rule)


# -- sparse ------------------------------------------------------------------


class CSR:
    """Constant sparse matrix in CSR form with sorted column indices per row."""

    __slots__ = ("indptr", "indices", "values", "n_cols")

    def __init__(self, indptr, indices, values, n_cols: int):
        self.indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(indices, dtype=np.int64)
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        self.n_cols = int(n_cols)

    @property
    def n_rows(self) -> int:
        return self.indptr.shape[0] - 1

    @property
    def row_ids(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_rows), np.diff(self.indptr))

    def todense(self) -> np.ndarray:
        out = np.zeros((self.n_rows, self.n_cols))
        np.add.at(out, (self.row_ids, self.indices), self.values)
        return out


def spmm(A: CSR, x: Tensor) -> Tensor:
    """Constant sparse matrix times a dense 2-d tensor."""
    if x.data.ndim != 2 or x.shape[0] != A.n_cols:
        raise ShapeError(f"spmm: sparse {A.n_rows}x{A.n_cols} by dense {x.shape}")
    out = kernels.csr_spmm(A.indptr, A.indices, A.values, x.data)
    return _emit(out, (x,),
                 lambda g: (kernels.csr_spmm_t(A.indptr, A.indices, A.values, g, A.n_cols),))


def spmm_values(A: CSR, values: Tensor, x: Tensor) -> Tensor:
    """Sparse product where the nonzero values are themselves differentiable.

    ``A`` supplies only the pattern; ``values`` has one entry per nonzero.
    """
    if values.shape != A.indices.shape:
        raise ShapeError(f"spmm_values: {values.shape} values for {A.indices.shape[0]} nonzeros")
    if x.data.ndim != 2 or x.shape[0] != A.n_cols:
        raise ShapeError(f"spmm_values: sparse {A.n_rows}x{A.n_cols} by dense {x.shape}")
    out = kernels.csr_spmm(A.indptr, A.indices, values.data, x.data)

    def rule(g):
        gv = kernels.csr_edge_dot(A.indptr, A.indices, g, x.data)
        gx = kernels.csr_spmm_t(A.indptr, A.indices, values.data, g, A.n_cols)
        return gv, gx

    return _emit(out, (values, x), rule)


def segment_softmax(scores: Tensor, A: CSR) -> Tensor:
    """Softmax of per-nonzero scores within each row of ``A``'s pattern."""
    rows = A.row_ids
    n = A.n_rows
    top = np.full(n, -np.inf)
    np.maximum.at(top, rows, scores.data)
    z = np.exp(scores.data - top[rows])
    total = np.bincount(rows, weights=z, minlength=n)
    y = z / total[rows]

    def rule(g):
        dot = np.bincount(rows, weights=g * y, minlength=n)
        return (y * (g - dot[rows]),)

    return _emit(y, (scores,), rule)


# -- optimizers --------------------------------------------------------------


class Optimizer:
    """Plain SGD or Adam over a fixed, ordered parameter list."""

    def __init__(self, kind: str = "adam", learning_rate: float = 0.01,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {kind!r}")
        if learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        self.kind = kind
        self.learning_rate = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m: list[np.ndarray] | None = None
        self.v: list[np.ndarray] | None = None

    def step(self, params: Sequence[Tensor], grads: Sequence[np.ndarray | None]):
        if len(params) != len(grads):
            raise ContractError(f"{len(params)} parameters but {len(grads)} gradients")
        grads = list(grads)
        for i, g in enumerate(grads):
            if g is None:
                logger.warning("no gradient for parameter %s; treating as zero", params[i].name or i)
                grads[i] = np.zeros_like(params[i].data)
        self.step_count += 1
        lr = self.learning_rate
        if self.kind == "sgd":
            for p, g in zip(params, grads):
                p.data = p.data - lr * g
            return
        if self.m is None:
            self.m = [np.zeros_like(p.data) for p in params]
            self.v = [np.zeros_like(p.data) for p in params]
        b1, b2, t = self.beta1, self.beta2, self.step_count
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            m_hat = self.m[i] / (1 - b1 ** t)
            v_hat = self.v[i] / (1 - b2 ** t)
            p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + self.eps)


def parameters_finite(params: Iterable[Tensor]) -> bool:
    return all(np.all(np.isfinite(p.data)) for p in params)
