"""Dense 2-D tensors with tape-based reverse-mode differentiation.

Every tensor is a float64 matrix. Operations executed while a :class:`Tape`
is active are recorded on it (only when at least one operand requires a
gradient), and :meth:`Tape.backward` walks the record in reverse to
accumulate gradients for the leaves the caller asks about.

Outside of an active tape the same functions simply compute values, which
is what inference and finite-difference probing use.
"""

from __future__ import annotations

import contextlib
import contextvars
from collections.abc import Callable, Mapping, Sequence
from typing import Optional, Union

import numpy as np
from scipy.special import expit

from .errors import DomainError, NumericError, ShapeError

ArrayLike = Union[np.ndarray, float, int, Sequence]
BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_ACTIVE_TAPE: contextvars.ContextVar[Optional["Tape"]] = contextvars.ContextVar(
    "dgda_active_tape", default=None
)


class Tensor:
    """A dense ``rows x cols`` float64 matrix.

    Leaves that should receive gradients are created with
    ``requires_grad=True``. Results of recorded operations inherit the flag.
    """

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got an array with shape {arr.shape}")
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = requires_grad
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        out = object.__new__(cls)
        out.data = arr
        out.requires_grad = False
        out.name = None
        return out

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape  # type: ignore[return-value]

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        if self.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, _as_tensor(other, self.shape))

    __radd__ = __add__

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, _as_tensor(other, self.shape))

    def __rsub__(self, other) -> "Tensor":
        return sub(_as_tensor(other, self.shape), self)

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


def _as_tensor(value, shape: tuple[int, int]) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.full(shape, float(value)))


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out: Tensor, inputs: tuple[Tensor, ...], backward: BackwardFn):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of primitive operations.

    Use as a context manager; operations run inside the ``with`` block are
    appended in execution order, so inputs always precede the node that
    consumes them.
    """

    def __init__(self) -> None:
        self.nodes: list[_Node] = []
        self._token: Optional[contextvars.Token] = None

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        if self._token is not None:
            _ACTIVE_TAPE.reset(self._token)
            self._token = None

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward: BackwardFn) -> None:
        self.nodes.append(_Node(out, inputs, backward))

    def backward(self, root: Tensor, params):
        """Gradients of the scalar ``root`` w.r.t. ``params``.

        ``params`` may be a mapping (name -> leaf) or a sequence of leaves;
        the result has the same form. Leaves that do not contribute to the
        root receive all-zero gradients.
        """
        if root.shape != (1, 1):
            raise ShapeError(f"backward needs a 1x1 root, got {root.shape}")
        if not np.isfinite(root.data[0, 0]):
            raise NumericError(f"backward from a non-finite root ({root.data[0, 0]})")
        grads: dict[int, np.ndarray] = {id(root): np.ones((1, 1))}
        for node in reversed(self.nodes):
            g = grads.get(id(node.out))
            if g is None:
                continue
            for inp, ig in zip(node.inputs, node.backward(g)):
                if ig is None or not inp.requires_grad:
                    continue
                key = id(inp)
                prev = grads.get(key)
                grads[key] = ig if prev is None else prev + ig

        def lookup(t: Tensor) -> np.ndarray:
            g = grads.get(id(t))
            if g is None:
                return np.zeros_like(t.data)
            if g.shape != t.shape:
                raise ShapeError(f"gradient shape {g.shape} does not match tensor {t.shape}")
            return g

        if isinstance(params, Mapping):
            return {name: lookup(t) for name, t in params.items()}
        return [lookup(t) for t in params]


def active_tape() -> Optional[Tape]:
    return _ACTIVE_TAPE.get()


@contextlib.contextmanager
def no_grad():
    """Suspend recording for the enclosed block."""
    token = _ACTIVE_TAPE.set(None)
    try:
        yield
    finally:
        _ACTIVE_TAPE.reset(token)


def make_op(data: np.ndarray, inputs: Sequence[Tensor], backward: BackwardFn) -> Tensor:
    """Wrap ``data`` as the output of a primitive and record it if needed.

    ``backward`` receives the output gradient and returns one gradient (or
    ``None``) per input, in order.
    """
    out = Tensor._wrap(data)
    tape = _ACTIVE_TAPE.get()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, tuple(inputs), backward)
    return out


# ---------------------------------------------------------------------------
# stable scalar helpers

def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(x)


def stable_softplus(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


# ---------------------------------------------------------------------------
# primitives

def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data
    return make_op(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return make_op(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return make_op(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return make_op(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return make_op(x.data * c, (x,), lambda g: (g * c,))


def add_row(x: Tensor, row: Tensor) -> Tensor:
    """Add a ``1 x cols`` row vector to every row of ``x`` (a bias)."""
    if row.rows != 1 or row.cols != x.cols:
        raise ShapeError(f"add_row: cannot broadcast {row.shape} over {x.shape}")
    return make_op(x.data + row.data, (x, row), lambda g: (g, g.sum(axis=0, keepdims=True)))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_op(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    s = stable_sigmoid(x.data)
    return make_op(s, (x,), lambda g: (g * s * (1.0 - s),))


def log_sigmoid(x: Tensor) -> Tensor:
    """``log(sigmoid(x))`` without overflow for large ``|x|``."""
    xd = x.data
    return make_op(-stable_softplus(-xd), (x,), lambda g: (g * stable_sigmoid(-xd),))


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise DomainError("log: entries must be strictly positive")
    xd = x.data
    return make_op(np.log(xd), (x,), lambda g: (g / xd,))


def exp(x: Tensor) -> Tensor:
    e = np.exp(x.data)
    return make_op(e, (x,), lambda g: (g * e,))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.data >= lo) & (x.data <= hi)
    return make_op(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


def transpose(x: Tensor) -> Tensor:
    return make_op(x.data.T.copy(), (x,), lambda g: (g.T,))


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return make_op(np.array([[x.data.sum()]]), (x,), lambda g: (np.full(shape, g[0, 0]),))


def mean_rows(x: Tensor) -> Tensor:
    """Column means as a ``1 x cols`` tensor."""
    if x.rows < 1:
        raise ShapeError("mean_rows: empty tensor")
    n = x.rows
    return make_op(
        x.data.mean(axis=0, keepdims=True),
        (x,),
        lambda g: (np.repeat(g / n, n, axis=0),),
    )


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat_cols: no parts given")
    rows = parts[0].rows
    for p in parts:
        if p.rows != rows:
            raise ShapeError(
                f"concat_cols: row counts differ ({[q.rows for q in parts]})"
            )
    if len(parts) == 1:
        return parts[0]
    bounds = np.cumsum([0] + [p.cols for p in parts])

    def backward(g):
        return [g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts))]

    return make_op(np.concatenate([p.data for p in parts], axis=1), tuple(parts), backward)


def row_slice(x: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start <= stop <= x.rows:
        raise ShapeError(f"row_slice: [{start}:{stop}] out of range for {x.shape}")
    shape = x.shape

    def backward(g):
        full = np.zeros(shape)
        full[start:stop] = g
        return (full,)

    return make_op(x.data[start:stop].copy(), (x,), backward)


def propagate(blocks: Union[np.ndarray, Sequence[np.ndarray]], x: Tensor) -> Tensor:
    """Left-multiply ``x`` by a constant (block-diagonal) matrix.

    ``blocks`` is one square matrix, a list of square matrices whose sizes
    partition the rows of ``x`` (one block per stacked graph), or a
    ``(graphs, n, n)`` array of equal-size blocks. The constant receives no
    gradient.
    """
    if isinstance(blocks, np.ndarray) and blocks.ndim == 3:
        # pre-stacked equal-size blocks
        k, n = blocks.shape[0], blocks.shape[1]
        if k * n != x.rows or blocks.shape[2] != n:
            raise ShapeError(f"propagate: blocks {blocks.shape} do not chain with {x.shape}")
        xd = x.data
        out = np.matmul(blocks, xd.reshape(k, n, -1)).reshape(xd.shape)
        stack_t = blocks.transpose(0, 2, 1)
        return make_op(out, (x,), lambda g: (np.matmul(stack_t, g.reshape(k, n, -1)).reshape(g.shape),))
    if isinstance(blocks, np.ndarray):
        blocks = [blocks]
    sizes = [b.shape[0] for b in blocks]
    if sum(sizes) != x.rows or any(b.shape[0] != b.shape[1] for b in blocks):
        raise ShapeError(
            f"propagate: blocks {[b.shape for b in blocks]} do not chain with {x.shape}"
        )
    xd = x.data
    if len(blocks) == 1:
        a = blocks[0]
        return make_op(a @ xd, (x,), lambda g: (a.T @ g,))
    if len(set(sizes)) == 1:
        # equal-size graphs: one batched matmul over a (graphs, n, n) stack
        stack = np.stack(blocks)
        n, k = sizes[0], len(sizes)
        out = np.matmul(stack, xd.reshape(k, n, -1)).reshape(xd.shape)
        stack_t = stack.transpose(0, 2, 1)
        return make_op(out, (x,), lambda g: (np.matmul(stack_t, g.reshape(k, n, -1)).reshape(g.shape),))
    bounds = np.cumsum([0] + sizes)
    out = np.empty_like(xd)
    for b, lo, hi in zip(blocks, bounds[:-1], bounds[1:]):
        out[lo:hi] = b @ xd[lo:hi]

    def backward(g):
        gx = np.empty_like(g)
        for b, lo, hi in zip(blocks, bounds[:-1], bounds[1:]):
            gx[lo:hi] = b.T @ g[lo:hi]
        return (gx,)

    return make_op(out, (x,), backward)


def segment_mean(x: Tensor, sizes: Sequence[int]) -> Tensor:
    """Column means of consecutive row segments; one output row per segment."""
    sizes = list(sizes)
    if sum(sizes) != x.rows or any(s < 1 for s in sizes):
        raise ShapeError(f"segment_mean: sizes {sizes} do not partition {x.rows} rows")
    seg = np.repeat(np.arange(len(sizes)), sizes)
    counts = np.asarray(sizes, dtype=np.float64)[:, None]
    starts = np.cumsum([0] + sizes[:-1])
    out = np.add.reduceat(x.data, starts, axis=0) / counts

    def backward(g):
        return ((g / counts)[seg],)

    return make_op(out, (x,), backward)


def bce_with_logits(logits: Tensor, target: np.ndarray, weight: Optional[np.ndarray] = None) -> Tensor:
    """Summed binary cross-entropy ``w * (softplus(l) - t * l)`` as a 1x1 tensor.

    ``target`` and ``weight`` are constants with the shape of ``logits``.
    """
    target = np.asarray(target, dtype=np.float64)
    if target.shape != logits.shape:
        raise ShapeError(f"bce_with_logits: target {target.shape} vs logits {logits.shape}")
    w = np.ones_like(target) if weight is None else np.asarray(weight, dtype=np.float64)
    if w.shape != logits.shape:
        raise ShapeError(f"bce_with_logits: weight {w.shape} vs logits {logits.shape}")
    ld = logits.data
    value = np.sum(w * (stable_softplus(ld) - target * ld))
    return make_op(
        np.array([[value]]),
        (logits,),
        lambda g: (g[0, 0] * w * (stable_sigmoid(ld) - target),),
    )


def segment_gram_bce(x: Tensor, sizes: Sequence[int], targets: Sequence[np.ndarray],
                     weights: Sequence[np.ndarray]) -> Tensor:
    """Weighted BCE of inner-product logits, summed over row segments.

    Segment ``s`` covers ``sizes[s]`` consecutive rows ``X_s`` and scores the
    logits ``X_s X_s^T`` against ``targets[s]`` with ``weights[s]``. This is
    the fused form of ``bce_with_logits(matmul(X_s, X_s^T), ...)`` summed
    over segments.
    """
    sizes = list(sizes)
    if sum(sizes) != x.rows or len(targets) != len(sizes) or len(weights) != len(sizes):
        raise ShapeError(f"segment_gram_bce: sizes {sizes} do not match {x.rows} rows / targets")
    xd = x.data
    for s, (t, w) in enumerate(zip(targets, weights)):
        if t.shape != (sizes[s], sizes[s]) or w.shape != t.shape:
            raise ShapeError(f"segment_gram_bce: segment {s} target/weight shape mismatch")
    if len(set(sizes)) == 1:
        k, n = len(sizes), sizes[0]
        x3 = xd.reshape(k, n, -1)
        logits = np.matmul(x3, x3.transpose(0, 2, 1))
        t3, w3 = np.stack(targets), np.stack(weights)
        value = float(np.sum(w3 * (stable_softplus(logits) - t3 * logits)))
        r3 = w3 * (stable_sigmoid(logits) - t3)
        sym = r3 + r3.transpose(0, 2, 1)
        return make_op(np.array([[value]]), (x,),
                       lambda g: (g[0, 0] * np.matmul(sym, x3).reshape(xd.shape),))

    bounds = np.cumsum([0] + sizes)
    value = 0.0
    residuals = []
    for s, (lo, hi) in enumerate(zip(bounds[:-1], bounds[1:])):
        xs = xd[lo:hi]
        logits = xs @ xs.T
        t, w = targets[s], weights[s]
        value += float(np.sum(w * (stable_softplus(logits) - t * logits)))
        residuals.append(w * (stable_sigmoid(logits) - t))

    def backward(g):
        gx = np.empty_like(xd)
        c = g[0, 0]
        for r, lo, hi in zip(residuals, bounds[:-1], bounds[1:]):
            gx[lo:hi] = c * ((r + r.T) @ xd[lo:hi])
        return (gx,)

    return make_op(np.array([[value]]), (x,), backward)


_UNARY = {"relu": relu, "sigmoid": sigmoid, "log": log, "exp": exp}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(op: str, *inputs: Tensor, c: Optional[float] = None) -> Tensor:
    """Dispatch an element-wise operation by name.

    ``op`` is one of add, sub, mul (two inputs), relu, sigmoid, log, exp
    (one input) or scale (one input plus the constant ``c``).
    """
    if op in _BINARY:
        if len(inputs) != 2:
            raise ShapeError(f"{op} takes two inputs, got {len(inputs)}")
        return _BINARY[op](*inputs)
    if op in _UNARY:
        if len(inputs) != 1:
            raise ShapeError(f"{op} takes one input, got {len(inputs)}")
        return _UNARY[op](inputs[0])
    if op == "scale":
        if c is None or len(inputs) != 1:
            raise ShapeError("scale takes one input and a constant c")
        return scale(inputs[0], c)
    raise ValueError(f"unknown element-wise op {op!r}")


# ---------------------------------------------------------------------------
# finite-difference checking

def grad_check_report(
    f: Callable[[Mapping[str, Tensor]], Tensor],
    params: Mapping[str, Tensor],
    step: float = 1e-5,
) -> dict[str, float]:
    """Max relative gradient error per named parameter.

    Compares tape gradients against central differences with the given
    step; the error of one entry is ``|analytic - numeric| / max(1, |numeric|)``.
    ``f`` must be deterministic in ``params``.
    """
    if not step > 0:
        raise ValueError(f"grad_check: step must be positive, got {step}")
    with Tape() as tape:
        root = f(params)
    analytic = tape.backward(root, params)

    def probe() -> float:
        with no_grad():
            v = f(params).item()
        if not np.isfinite(v):
            raise NumericError("grad_check: non-finite function value while probing")
        return v

    report: dict[str, float] = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        ga = analytic[name].reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = probe()
            flat[i] = orig - step
            fm = probe()
            flat[i] = orig
            num = (fp - fm) / (2.0 * step)
            worst = max(worst, abs(ga[i] - num) / max(1.0, abs(num)))
        report[name] = worst
    return report


def grad_check(f, params: Mapping[str, Tensor], step: float = 1e-5) -> float:
    """Largest relative error over all entries of all ``params``."""
    report = grad_check_report(f, params, step)
    return max(report.values(), default=0.0)
