"""Dense float64 tensors with reverse-mode automatic differentiation.

A ``Tape`` records every operation in creation order; ``backward`` walks it
once in reverse.  Shapes are always explicit: there is no implicit
broadcasting, so a shape mismatch fails at the call site.  Geometric
primitives (unit normalization, cosine similarity, angular distance) live
here because every other module consumes them.
"""
from __future__ import annotations

import numpy as np

EPS_NORM = 1e-12


class ShapeMismatchError(ValueError):
    """Operand shapes are not conformable for the requested operation."""


class DomainError(ValueError):
    """Operand values outside the mathematical domain of the operation."""


class DegenerateInputError(ValueError):
    """Input too close to zero to define a direction."""


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


class Tape:
    """Append-only record of tensors in topological (creation) order."""

    def __init__(self) -> None:
        self.nodes: list[Tensor] = []

    def record(self, t: "Tensor") -> None:
        t._node_id = len(self.nodes)
        self.nodes.append(t)

    def leaves(self) -> list["Tensor"]:
        return [t for t in self.nodes if not t.parents]


class Tensor:
    """A float64 array plus the bookkeeping needed for reverse mode.

    Tensors without a tape are plain immutable values; tensors recorded on a
    tape participate in ``backward``.
    """

    __slots__ = ("data", "grad", "tape", "parents", "_backward", "_node_id", "op")

    def __init__(self, data, tape: Tape | None = None, parents=(), backward=None,
                 op: str = "leaf"):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite values produced by '{op}'")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.tape = tape
        self.parents = tuple(parents)
        self._backward = backward
        self._node_id = -1
        self.op = op
        if tape is not None:
            tape.record(self)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(op={self.op!r}, shape={self.shape})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _merge_tape(*tensors: Tensor) -> Tape | None:
    tape = None
    for t in tensors:
        if t.tape is not None:
            if tape is not None and tape is not t.tape:
                raise ValueError("operands recorded on different tapes")
            tape = t.tape
    return tape


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.tape is None:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------------------
# elementwise and reduction operations


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "add")

    def bw(out):
        _accum(a, out.grad)
        _accum(b, out.grad)

    return Tensor(a.data + b.data, _merge_tape(a, b), (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "sub")

    def bw(out):
        _accum(a, out.grad)
        _accum(b, -out.grad)

    return Tensor(a.data - b.data, _merge_tape(a, b), (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "mul")

    def bw(out):
        _accum(a, out.grad * b.data)
        _accum(b, out.grad * a.data)

    return Tensor(a.data * b.data, _merge_tape(a, b), (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "div")

    def bw(out):
        _accum(a, out.grad / b.data)
        _accum(b, -out.grad * a.data / (b.data * b.data))

    return Tensor(a.data / b.data, _merge_tape(a, b), (a, b), bw, "div")


def neg(a) -> Tensor:
    a = _as_tensor(a)

    def bw(out):
        _accum(a, -out.grad)

    return Tensor(-a.data, a.tape, (a,), bw, "neg")


def scale(a, c: float) -> Tensor:
    """Multiply by a plain (non-differentiated) scalar constant."""
    a = _as_tensor(a)
    c = float(c)

    def bw(out):
        _accum(a, out.grad * c)

    return Tensor(a.data * c, a.tape, (a,), bw, "scale")


def smul(a, s) -> Tensor:
    """Multiply every element of ``a`` by a single-element tensor ``s``."""
    a, s = _as_tensor(a), _as_tensor(s)
    if s.data.size != 1:
        raise ShapeMismatchError(f"smul: scalar operand has shape {s.shape}")
    sv = float(s.data.reshape(-1)[0])

    def bw(out):
        _accum(a, out.grad * sv)
        _accum(s, np.array(np.sum(out.grad * a.data)).reshape(s.shape))

    return Tensor(a.data * sv, _merge_tape(a, s), (a, s), bw, "smul")


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0

    def bw(out):
        _accum(a, out.grad * mask)

    return Tensor(np.where(mask, a.data, 0.0), a.tape, (a,), bw, "relu")


def exp(a) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(over="ignore"):
        val = np.exp(a.data)
    if not np.all(np.isfinite(val)):
        raise NonFiniteError("exp overflow; subtract a max before exponentiating")

    def bw(out):
        _accum(a, out.grad * val)

    return Tensor(val, a.tape, (a,), bw, "exp")


def log(a) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log of a non-positive value")
    val = np.log(a.data)

    def bw(out):
        _accum(a, out.grad / a.data)

    return Tensor(val, a.tape, (a,), bw, "log")


def pow_const(a, p: float) -> Tensor:
    a = _as_tensor(a)
    p = float(p)
    if p != int(p) and np.any(a.data <= 0):
        raise DomainError(f"x**{p} requires positive base")

    def bw(out):
        _accum(a, out.grad * p * a.data ** (p - 1.0))

    return Tensor(a.data ** p, a.tape, (a,), bw, "pow_const")


def clamp(a, lo: float, hi: float) -> Tensor:
    """Clip values to [lo, hi]; gradient is zero outside the bounds."""
    a = _as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)

    def bw(out):
        _accum(a, out.grad * inside)

    return Tensor(np.clip(a.data, lo, hi), a.tape, (a,), bw, "clamp")


def arccos(a) -> Tensor:
    a = _as_tensor(a)
    if np.any(np.abs(a.data) > 1.0):
        raise DomainError("arccos argument outside [-1, 1]")

    def bw(out):
        _accum(a, -out.grad / np.sqrt(np.maximum(1.0 - a.data * a.data, EPS_NORM)))

    return Tensor(np.arccos(a.data), a.tape, (a,), bw, "arccos")


def tensor_sum(a) -> Tensor:
    a = _as_tensor(a)

    def bw(out):
        _accum(a, np.full(a.shape, float(out.grad)))

    return Tensor(np.sum(a.data), a.tape, (a,), bw, "sum")


def mean(a) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size

    def bw(out):
        _accum(a, np.full(a.shape, float(out.grad) / n))

    return Tensor(np.mean(a.data), a.tape, (a,), bw, "mean")


# ---------------------------------------------------------------------------
# matrix operations


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeMismatchError("matmul requires 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"matmul: inner dims {a.shape} @ {b.shape}")

    def bw(out):
        _accum(a, out.grad @ b.data.T)
        _accum(b, a.data.T @ out.grad)

    return Tensor(a.data @ b.data, _merge_tape(a, b), (a, b), bw, "matmul")


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeMismatchError("transpose requires a 2-D operand")

    def bw(out):
        _accum(a, out.grad.T)

    return Tensor(a.data.T, a.tape, (a,), bw, "transpose")


def concat_rows(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeMismatchError(f"concat_rows: shapes {a.shape} and {b.shape}")
    na = a.shape[0]

    def bw(out):
        _accum(a, out.grad[:na])
        _accum(b, out.grad[na:])

    return Tensor(np.concatenate([a.data, b.data], axis=0),
                  _merge_tape(a, b), (a, b), bw, "concat_rows")


# ---------------------------------------------------------------------------
# reverse pass


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Run one reverse pass from a scalar loss.

    Returns a map from every leaf tensor on the tape to its gradient;
    leaves unreachable from ``loss`` get zeros.
    """
    if loss.data.size != 1:
        raise ShapeMismatchError(f"backward requires a scalar loss, got shape {loss.shape}")
    if loss.tape is None:
        raise ValueError("loss is not recorded on a tape")
    tape = loss.tape
    for node in tape.nodes:
        node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes[: loss._node_id + 1]):
        if node.grad is None or node._backward is None:
            continue
        node._backward(node)
    grads: dict[Tensor, np.ndarray] = {}
    for leaf in tape.leaves():
        grads[leaf] = leaf.grad.copy() if leaf.grad is not None else np.zeros_like(leaf.data)
    return grads


# ---------------------------------------------------------------------------
# geometric primitives


def l2_normalize(v: Tensor) -> Tensor:
    """Project a vector onto the unit sphere; rejects near-zero input."""
    v = _as_tensor(v)
    nrm = float(np.linalg.norm(v.data))
    if nrm <= EPS_NORM:
        raise DegenerateInputError(f"cannot normalize vector with norm {nrm:g}")
    s = tensor_sum(mul(v, v))
    return smul(v, pow_const(s, -0.5))


def cosine_similarity(a, b) -> Tensor:
    """Cosine of the angle between two vectors, clamped to [-1, 1]."""
    na, nb = l2_normalize(_as_tensor(a)), l2_normalize(_as_tensor(b))
    return clamp(tensor_sum(mul(na, nb)), -1.0, 1.0)


def angular_distance(a, b) -> Tensor:
    """Angle in [0, pi] between two vectors."""
    return arccos(cosine_similarity(a, b))


def row_normalize(m: Tensor) -> Tensor:
    """Normalize every row of a 2-D tensor to unit Euclidean norm."""
    m = _as_tensor(m)
    if m.data.ndim != 2:
        raise ShapeMismatchError("row_normalize requires a 2-D operand")
    n, d = m.shape
    sq = matmul(mul(m, m), Tensor(np.ones((d, 1))))
    if np.any(sq.data <= EPS_NORM ** 2):
        raise DegenerateInputError("row with near-zero norm cannot be normalized")
    inv = pow_const(sq, -0.5)
    return mul(m, matmul(inv, Tensor(np.ones((1, d)))))


def cosine_matrix(a: Tensor, b: Tensor) -> Tensor:
    """Pairwise cosine similarities between rows of ``a`` and rows of ``b``."""
    return clamp(matmul(row_normalize(a), transpose(row_normalize(b))), -1.0, 1.0)
