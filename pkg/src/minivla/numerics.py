"""Dense float64 tensors with tape-based reverse-mode autodiff.

The op vocabulary is exactly what the policy stack needs: matmul,
elementwise arithmetic, tanh/sigmoid, row softmax, concat/slice,
column max, reductions, and logit-form binary cross-entropy. Arrays
are float64 in memory; a built graph belongs to one execution context
and `backward` visits each node exactly once, so gradients are
bitwise reproducible for a fixed graph.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from .errors import (
    ContractError,
    DeterminismError,
    DimensionError,
    NumericInputError,
)

Array = np.ndarray

# Graph recording can be suspended for pure inference (rollouts, finite
# differences); the flag is a stack so contexts nest.
_GRAD_ENABLED = [True]


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Suspend graph recording inside the block."""
    _GRAD_ENABLED.append(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.pop()


class Tensor:
    """Row-major float64 array plus an optional autodiff tape node."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Array | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[Array], tuple[Array | None, ...]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # Operator sugar; the module-level functions are the real API.
    def __add__(self, other):
        return add(self, as_tensor(other))

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))


def as_tensor(x) -> Tensor:
    """Wrap scalars/arrays as constant tensors; pass tensors through."""
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _result(data: Array, parents: tuple[Tensor, ...], vjp) -> Tensor:
    """Build an op result, linking it into the tape only when needed."""
    if _GRAD_ENABLED[-1] and any(p.requires_grad for p in parents):
        out = Tensor(data, requires_grad=True)
        out._parents = parents
        out._vjp = vjp
        return out
    return Tensor(data)


def _reduce_to(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum a broadcast gradient back down to the original shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor, opname: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(
            f"{opname}: shapes {a.shape} and {b.shape} do not broadcast"
        ) from None


# ---------------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")
    out = a.data + b.data

    def vjp(g: Array):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _result(out, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "sub")
    out = a.data - b.data

    def vjp(g: Array):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    return _result(out, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "mul")
    out = a.data * b.data
    ad, bd = a.data, b.data

    def vjp(g: Array):
        return _reduce_to(g * bd, a.shape), _reduce_to(g * ad, b.shape)

    return _result(out, (a, b), vjp)


def neg(a: Tensor) -> Tensor:
    def vjp(g: Array):
        return (-g,)

    return _result(-a.data, (a,), vjp)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def vjp(g: Array):
        return (g * (1.0 - y * y),)

    return _result(y, (a,), vjp)


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.data)

    def vjp(g: Array):
        return (g * y * (1.0 - y),)

    return _result(y, (a,), vjp)


def _sigmoid(x: Array) -> Array:
    # Stable in both tails.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(
            f"matmul expects 2-D operands, got {a.shape} and {b.shape}"
        )
    if a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"matmul inner dimensions disagree: {a.shape} x {b.shape}"
        )
    out = a.data @ b.data
    ad, bd = a.data, b.data

    def vjp(g: Array):
        return g @ bd.T, ad.T @ g

    return _result(out, (a, b), vjp)


def transpose(a: Tensor) -> Tensor:
    def vjp(g: Array):
        return (g.T,)

    return _result(a.data.T, (a,), vjp)


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax with per-row max subtraction."""
    if not np.isfinite(a.data).all():
        raise NumericInputError("softmax_rows: input contains non-finite values")
    x = np.atleast_2d(a.data)
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)
    p = p.reshape(a.shape)

    def vjp(g: Array):
        gp = g * p
        return (gp - p * gp.sum(axis=-1, keepdims=True),)

    return _result(p, (a,), vjp)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(q kᵀ / sqrt(d)) v with single-head 2-D operands."""
    if q.data.ndim != 2 or k.data.ndim != 2 or v.data.ndim != 2:
        raise DimensionError("attention expects 2-D q, k, v")
    if q.shape[1] != k.shape[1]:
        raise DimensionError(
            f"attention feature dims disagree: q {q.shape} vs k {k.shape}"
        )
    if k.shape[0] != v.shape[0]:
        raise DimensionError(
            f"attention key/value counts disagree: k {k.shape} vs v {v.shape}"
        )
    scale = 1.0 / np.sqrt(q.shape[1])
    scores = mul(matmul(q, transpose(k)), as_tensor(scale))
    return matmul(softmax_rows(scores), v)


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------


def concat_rows(parts: list[Tensor]) -> Tensor:
    if not parts:
        raise ContractError("concat_rows: empty part list")
    width = parts[0].shape[-1]
    for p in parts:
        if p.data.ndim != 2 or p.shape[1] != width:
            raise DimensionError(
                f"concat_rows: incompatible part shape {p.shape}, want (*, {width})"
            )
    out = np.concatenate([p.data for p in parts], axis=0)
    splits = np.cumsum([p.shape[0] for p in parts])[:-1]

    def vjp(g: Array):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, splits, axis=0))

    return _result(out, tuple(parts), vjp)


def slice_cols(a: Tensor, j0: int, j1: int) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"slice_cols expects 2-D input, got {a.shape}")
    if not (0 <= j0 < j1 <= a.shape[1]):
        raise DimensionError(f"slice_cols [{j0}:{j1}] out of range for {a.shape}")
    out = a.data[:, j0:j1].copy()
    shape = a.shape

    def vjp(g: Array):
        full = np.zeros(shape)
        full[:, j0:j1] = g
        return (full,)

    return _result(out, (a,), vjp)


def slice_rows(a: Tensor, i0: int, i1: int) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"slice_rows expects 2-D input, got {a.shape}")
    if not (0 <= i0 < i1 <= a.shape[0]):
        raise DimensionError(f"slice_rows [{i0}:{i1}] out of range for {a.shape}")
    out = a.data[i0:i1, :].copy()
    shape = a.shape

    def vjp(g: Array):
        full = np.zeros(shape)
        full[i0:i1, :] = g
        return (full,)

    return _result(out, (a,), vjp)


def max_over_rows(a: Tensor) -> Tensor:
    """Column-wise max over rows; gradient routes to the first argmax."""
    if a.data.ndim != 2:
        raise DimensionError(f"max_over_rows expects 2-D input, got {a.shape}")
    idx = np.argmax(a.data, axis=0)
    out = a.data[idx, np.arange(a.shape[1])].reshape(1, -1)
    shape = a.shape

    def vjp(g: Array):
        full = np.zeros(shape)
        full[idx, np.arange(shape[1])] = g.reshape(-1)
        return (full,)

    return _result(out, (a,), vjp)


# ---------------------------------------------------------------------------
# reductions and losses
# ---------------------------------------------------------------------------


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape

    def vjp(g: Array):
        return (np.full(shape, float(g)),)

    return _result(np.asarray(a.data.sum()), (a,), vjp)


def mean_all(a: Tensor) -> Tensor:
    n = a.size
    shape = a.shape

    def vjp(g: Array):
        return (np.full(shape, float(g) / n),)

    return _result(np.asarray(a.data.mean()), (a,), vjp)


def mse(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared error over all elements."""
    d = sub(pred, target)
    return mean_all(mul(d, d))


def bce_with_logits(logits: Tensor, labels: Tensor) -> Tensor:
    """Elementwise binary cross-entropy in logit form, summed.

    Uses max(z,0) - z*y + log1p(exp(-|z|)), stable for large |z|.
    """
    _check_broadcast(logits, labels, "bce_with_logits")
    z, y = logits.data, labels.data
    per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    out = np.asarray(per.sum())
    lshape, tshape = logits.shape, labels.shape

    def vjp(g: Array):
        dz = float(g) * (_sigmoid(z) - y)
        return _reduce_to(dz, lshape), _reduce_to(float(g) * (-z), tshape)

    return _result(out, (logits, labels), vjp)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b with a row-broadcast bias."""
    return add(matmul(x, w), b)


def mlp2(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """Two affine maps with a tanh between."""
    return affine(tanh(affine(x, w1, b1)), w2, b2)


# ---------------------------------------------------------------------------
# parameter registry
# ---------------------------------------------------------------------------


class ParamSet:
    """Named tensors with per-entry trainable flags.

    Names are dotted paths; iteration is always lexicographic, so any
    walk over a ParamSet is deterministic.
    """

    def __init__(self):
        self._entries: dict[str, Tensor] = {}

    def add(self, name: str, data, trainable: bool) -> Tensor:
        if name in self._entries:
            raise ContractError(f"duplicate parameter name: {name}")
        t = Tensor(np.array(data, dtype=np.float64), requires_grad=trainable, name=name)
        self._entries[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list[str]:
        return sorted(self._entries)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        for name in sorted(self._entries):
            yield name, self._entries[name]

    def trainable_items(self) -> Iterator[tuple[str, Tensor]]:
        for name, t in self.items():
            if t.requires_grad:
                yield name, t

    def subset(self, predicate) -> "ParamSet":
        """View over entries whose name satisfies the predicate (shared tensors)."""
        out = ParamSet()
        for name, t in self.items():
            if predicate(name):
                out._entries[name] = t
        return out

    def zero_grads(self) -> None:
        for _, t in self.items():
            t.zero_grad()

    def checksum(self, prefix: str = "") -> float:
        """Order-stable fingerprint of raw parameter bytes under a prefix."""
        import zlib

        crc = 0
        for name, t in self.items():
            if name.startswith(prefix):
                crc = zlib.crc32(name.encode(), crc)
                crc = zlib.crc32(np.ascontiguousarray(t.data).tobytes(), crc)
        return float(crc)


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------


def _topo_from(root: Tensor) -> list[Tensor]:
    """Parents-before-children ordering of the sub-DAG that reaches root."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p._parents or p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: ParamSet | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable trainable leaf.

    Trainable params not on the graph keep (or get) zero grads when a
    ParamSet is supplied. Raises ContractError for non-scalar losses.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if params is not None:
        for _, t in params.trainable_items():
            if t.grad is None:
                t.grad = np.zeros_like(t.data)

    order = _topo_from(loss)
    grads: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            if node.requires_grad:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g.reshape(node.data.shape)
            continue
        contribs = node._vjp(g)
        for parent, contrib in zip(node._parents, contribs):
            if contrib is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + contrib
            else:
                grads[key] = contrib


# ---------------------------------------------------------------------------
# finite-difference checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_param: str | None
    no_trainable: bool
    n_checked: int


def grad_check(f, params: ParamSet, eps: float = 1e-5) -> GradCheckResult:
    """Compare analytic gradients of f against central finite differences.

    Error metric per entry: |analytic - numeric| / max(1, |analytic|).
    f must be a deterministic function of the ParamSet; two baseline
    evaluations are compared bitwise to enforce that.
    """
    if eps <= 0:
        raise ContractError("grad_check: eps must be positive")
    with no_grad():
        b1 = f(params).item()
        b2 = f(params).item()
    if b1 != b2:
        raise DeterminismError(
            f"grad_check: two baseline evaluations differ ({b1!r} vs {b2!r})"
        )

    entries = list(params.trainable_items())
    if not entries:
        return GradCheckResult(0.0, None, True, 0)

    params.zero_grads()
    loss = f(params)
    backward(loss, params)
    analytic = {name: t.grad.copy() for name, t in entries}

    worst = 0.0
    worst_name = None
    checked = 0
    for name, t in entries:
        flat = t.data.reshape(-1)
        ana = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            with no_grad():
                fp = f(params).item()
            flat[i] = orig - eps
            with no_grad():
                fm = f(params).item()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * eps)
            rel = abs(ana[i] - numeric) / max(1.0, abs(ana[i]))
            checked += 1
            if rel > worst:
                worst = rel
                worst_name = name
    return GradCheckResult(worst, worst_name, False, checked)
