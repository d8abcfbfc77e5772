"""Dense float tensors with a minimal reverse-mode autodiff engine.

Design choices that tests rely on:

* Tensors wrap immutable numpy arrays (the buffer is marked read-only at
  construction). Ops never mutate operands; every op allocates its output.
* The graph is a tape: each op records its parent tensors and a closure
  producing the parents' gradient contributions. A monotonically increasing
  creation id per tensor makes creation order a valid topological order, so
  backward is a single reverse walk with a fixed, deterministic reduction
  order.
* Gradients propagate only along paths that end in a tensor built with
  ``requires_grad=True``. Tensors off those paths never allocate a gradient
  buffer and keep no parent references.
* dtype is uniform within a graph: mixing float32 and float64 operands is a
  DimensionError, never a silent upcast. Supported dtypes are float32 and
  float64.
* Shapes are 0-d (scalars), 1-d (vectors) and 2-d (matrices). The only
  broadcast anywhere is ``add_bias`` (matrix + row vector).
"""

from __future__ import annotations

import itertools
import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

from .errors import ContractError, DegenerateInputError, DimensionError

__all__ = [
    "Tensor",
    "Graph",
    "constant",
    "parameter",
    "backward",
    "add",
    "sub",
    "mul",
    "scale",
    "add_scalar",
    "neg",
    "matmul",
    "matvec",
    "vecmat",
    "dot",
    "transpose",
    "sum_all",
    "mean_rows",
    "stack_rows",
    "concat_rows",
    "concat_cols",
    "slice_rows",
    "slice_cols",
    "take_row",
    "take_rows",
    "add_bias",
    "relu",
    "gelu",
    "softmax_rows",
    "layer_norm",
    "l2_normalize",
    "cosine",
    "causal_attention",
]

_SUPPORTED = (np.dtype(np.float32), np.dtype(np.float64))
_ids = itertools.count()


class Tensor:
    """Immutable array node in the autodiff graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_grad_fn", "_uid")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.array(data, dtype=dtype, copy=True)
        if arr.dtype not in _SUPPORTED:
            if np.issubdtype(arr.dtype, np.integer):
                arr = arr.astype(np.float64)
            else:
                raise DimensionError(f"unsupported tensor dtype {arr.dtype}")
        if arr.ndim > 2:
            raise DimensionError(f"tensors are at most 2-d, got shape {arr.shape}")
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn: Callable[[np.ndarray], tuple[np.ndarray | None, ...]] | None = None
        self._uid = next(_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        """A writable copy of the underlying buffer."""
        return self.data.copy()

    def backward(self) -> dict["Tensor", np.ndarray]:
        return backward(self)

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{flag})"

    # arithmetic sugar; named functions below do the work
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


def constant(data, dtype=None) -> Tensor:
    """A tensor that never receives gradients."""
    return Tensor(data, requires_grad=False, dtype=dtype)


def parameter(data, dtype=None) -> Tensor:
    """A leaf tensor that accumulates gradients in ``.grad``."""
    return Tensor(data, requires_grad=True, dtype=dtype)


def _result(data: np.ndarray, parents: tuple[Tensor, ...], grad_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    data = np.asarray(data)  # numpy collapses some 0-d results to scalars
    data.flags.writeable = False
    out.data = data
    out.requires_grad = any(p.requires_grad for p in parents)
    out.grad = None
    # parents of non-grad nodes are dropped so dead subgraphs can be collected
    out._parents = parents if out.requires_grad else ()
    out._grad_fn = grad_fn if out.requires_grad else None
    out._uid = next(_ids)
    return out


def _same_dtype(*tensors: Tensor) -> np.dtype:
    dtype = tensors[0].dtype
    for t in tensors[1:]:
        if t.dtype != dtype:
            raise DimensionError(
                f"mixed dtypes in one graph: {dtype.name} vs {t.dtype.name}"
            )
    return dtype


class Graph:
    """Topologically ordered slice of the tape reachable from a root.

    ``nodes`` is every gradient-requiring ancestor of the root, sorted by
    creation id (ascending creation order is a valid topological order
    because an op's parents always exist before it).
    """

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def trace(cls, root: Tensor) -> "Graph":
        seen: set[int] = set()
        nodes: list[Tensor] = []
        stack = [root]
        while stack:
            node = stack.pop()
            if node._uid in seen or not node.requires_grad:
                continue
            seen.add(node._uid)
            nodes.append(node)
            stack.extend(node._parents)
        nodes.sort(key=lambda t: t._uid)
        return cls(nodes)

    def run_backward(self, root: Tensor) -> dict[Tensor, np.ndarray]:
        pending: dict[int, np.ndarray] = {
            root._uid: np.ones((), dtype=root.dtype)
        }
        leaves: dict[Tensor, np.ndarray] = {}
        for node in reversed(self.nodes):
            g = pending.pop(node._uid, None)
            if g is None:
                continue
            if node._grad_fn is None:
                node.grad = g if node.grad is None else node.grad + g
                leaves[node] = node.grad
                continue
            for parent, pg in zip(node._parents, node._grad_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent._uid in pending:
                    pending[parent._uid] = pending[parent._uid] + pg
                else:
                    pending[parent._uid] = pg
        return leaves


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Gradients of a scalar loss for every reachable parameter leaf.

    Accumulates into each leaf's ``.grad`` (create-or-add) and returns a
    mapping leaf tensor -> gradient array.
    """
    if loss.shape != ():
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return {}
    return Graph.trace(loss).run_backward(loss)


# ---------------------------------------------------------------------------
# elementwise and scalar ops


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype(a, b)
    if a.shape != b.shape:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} differ")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype(a, b)
    if a.shape != b.shape:
        raise DimensionError(f"sub: shapes {a.shape} and {b.shape} differ")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype(a, b)
    if a.shape != b.shape:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} differ")
    return _result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(a: Tensor, s: float) -> Tensor:
    s = a.dtype.type(s)
    return _result(a.data * s, (a,), lambda g: (g * s,))


def add_scalar(a: Tensor, s: float) -> Tensor:
    s = a.dtype.type(s)
    return _result(a.data + s, (a,), lambda g: (g,))


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    # np.maximum (unlike where-on-mask) propagates NaN to the output
    return _result(np.maximum(a.data, a.dtype.type(0)), (a,), lambda g: (g * mask,))


def gelu(a: Tensor) -> Tensor:
    """Exact erf-based GELU: x * Phi(x)."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / np.sqrt(x.dtype.type(2.0))))
    out = (x * cdf).astype(x.dtype)

    def grad_fn(g):
        pdf = np.exp(-0.5 * x * x) / np.sqrt(x.dtype.type(2.0 * math.pi))
        return ((g * (cdf + x * pdf)).astype(x.dtype),)

    return _result(out, (a,), grad_fn)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype(a, b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul needs matrices, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dims differ ({a.shape} @ {b.shape})")
    return _result(
        a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g)
    )


def matvec(a: Tensor, v: Tensor) -> Tensor:
    _same_dtype(a, v)
    if a.ndim != 2 or v.ndim != 1 or a.shape[1] != v.shape[0]:
        raise DimensionError(f"matvec: incompatible shapes {a.shape} @ {v.shape}")
    return _result(
        a.data @ v.data, (a, v), lambda g: (np.outer(g, v.data), a.data.T @ g)
    )


def vecmat(v: Tensor, a: Tensor) -> Tensor:
    _same_dtype(v, a)
    if v.ndim != 1 or a.ndim != 2 or v.shape[0] != a.shape[0]:
        raise DimensionError(f"vecmat: incompatible shapes {v.shape} @ {a.shape}")
    return _result(
        v.data @ a.data, (v, a), lambda g: (a.data @ g, np.outer(v.data, g))
    )


def dot(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype(a, b)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise DimensionError(f"dot needs equal-length vectors, got {a.shape}, {b.shape}")
    out = np.asarray(a.data @ b.data, dtype=a.dtype)
    return _result(out, (a, b), lambda g: (g * b.data, g * a.data))


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise DimensionError(f"transpose needs a matrix, got shape {a.shape}")
    return _result(a.data.T.copy(), (a,), lambda g: (g.T,))


def sum_all(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum(), dtype=a.dtype)

    def grad_fn(g):
        return (np.full(a.shape, g, dtype=a.dtype),)

    return _result(out, (a,), grad_fn)


def mean_rows(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise DimensionError(f"mean_rows needs a matrix, got shape {a.shape}")
    n = a.shape[0]
    out = (a.data.sum(axis=0) / a.dtype.type(n)).astype(a.dtype)

    def grad_fn(g):
        return (np.broadcast_to(g / a.dtype.type(n), a.shape).copy(),)

    return _result(out, (a,), grad_fn)


# ---------------------------------------------------------------------------
# structural ops


def stack_rows(vectors: Sequence[Tensor]) -> Tensor:
    vectors = tuple(vectors)
    if not vectors:
        raise DimensionError("stack_rows needs at least one vector")
    _same_dtype(*vectors)
    width = vectors[0].shape
    if any(v.ndim != 1 or v.shape != width for v in vectors):
        raise DimensionError("stack_rows needs equal-length vectors")
    out = np.stack([v.data for v in vectors])

    def grad_fn(g):
        return tuple(g[i] for i in range(len(vectors)))

    return _result(out, vectors, grad_fn)


def concat_rows(blocks: Sequence[Tensor]) -> Tensor:
    blocks = tuple(blocks)
    if not blocks:
        raise DimensionError("concat_rows needs at least one block")
    _same_dtype(*blocks)
    if any(b.ndim != 2 for b in blocks):
        raise DimensionError("concat_rows needs matrices")
    width = blocks[0].shape[1]
    if any(b.shape[1] != width for b in blocks):
        raise DimensionError("concat_rows: column counts differ")
    out = np.concatenate([b.data for b in blocks], axis=0)
    heights = [b.shape[0] for b in blocks]
    edges = np.cumsum([0] + heights)

    def grad_fn(g):
        return tuple(g[edges[i] : edges[i + 1]] for i in range(len(blocks)))

    return _result(out, blocks, grad_fn)


def concat_cols(blocks: Sequence[Tensor]) -> Tensor:
    blocks = tuple(blocks)
    if not blocks:
        raise DimensionError("concat_cols needs at least one block")
    _same_dtype(*blocks)
    if any(b.ndim != 2 for b in blocks):
        raise DimensionError("concat_cols needs matrices")
    height = blocks[0].shape[0]
    if any(b.shape[0] != height for b in blocks):
        raise DimensionError("concat_cols: row counts differ")
    out = np.concatenate([b.data for b in blocks], axis=1)
    widths = [b.shape[1] for b in blocks]
    edges = np.cumsum([0] + widths)

    def grad_fn(g):
        return tuple(g[:, edges[i] : edges[i + 1]] for i in range(len(blocks)))

    return _result(out, blocks, grad_fn)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    if a.ndim != 2 or not (0 <= start <= stop <= a.shape[0]):
        raise DimensionError(f"slice_rows[{start}:{stop}] invalid for shape {a.shape}")
    out = a.data[start:stop].copy()

    def grad_fn(g):
        full = np.zeros(a.shape, dtype=a.dtype)
        full[start:stop] = g
        return (full,)

    return _result(out, (a,), grad_fn)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.ndim != 2 or not (0 <= start <= stop <= a.shape[1]):
        raise DimensionError(f"slice_cols[{start}:{stop}] invalid for shape {a.shape}")
    out = a.data[:, start:stop].copy()

    def grad_fn(g):
        full = np.zeros(a.shape, dtype=a.dtype)
        full[:, start:stop] = g
        return (full,)

    return _result(out, (a,), grad_fn)


def take_row(a: Tensor, index: int) -> Tensor:
    if a.ndim != 2 or not (0 <= index < a.shape[0]):
        raise DimensionError(f"take_row({index}) invalid for shape {a.shape}")
    out = a.data[index].copy()

    def grad_fn(g):
        full = np.zeros(a.shape, dtype=a.dtype)
        full[index] = g
        return (full,)

    return _result(out, (a,), grad_fn)


def take_rows(a: Tensor, indices: Iterable[int]) -> Tensor:
    idx = np.asarray(list(indices), dtype=np.int64)
    if a.ndim != 2:
        raise DimensionError(f"take_rows needs a matrix, got shape {a.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise DimensionError(f"take_rows: index out of range for shape {a.shape}")
    out = a.data[idx].copy()

    def grad_fn(g):
        full = np.zeros(a.shape, dtype=a.dtype)
        np.add.at(full, idx, g)
        return (full,)

    return _result(out, (a,), grad_fn)


def add_bias(a: Tensor, b: Tensor) -> Tensor:
    """Matrix plus row vector; the only broadcasting op in the engine."""
    _same_dtype(a, b)
    if a.ndim != 2 or b.ndim != 1 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"add_bias: incompatible shapes {a.shape} + {b.shape}")
    return _result(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=0)))


# ---------------------------------------------------------------------------
# normalization and attention


def softmax_rows(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise DimensionError(f"softmax_rows needs a matrix, got shape {a.shape}")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = (e / e.sum(axis=1, keepdims=True)).astype(a.dtype)

    def grad_fn(g):
        inner = (g * y).sum(axis=1, keepdims=True)
        return ((y * (g - inner)).astype(a.dtype),)

    return _result(y, (a,), grad_fn)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Row-wise layer normalization with learned gain and bias."""
    _same_dtype(a, gain, bias)
    if a.ndim != 2 or gain.ndim != 1 or bias.ndim != 1:
        raise DimensionError("layer_norm needs (matrix, vector, vector)")
    width = a.shape[1]
    if gain.shape[0] != width or bias.shape[0] != width:
        raise DimensionError(f"layer_norm: width mismatch for shape {a.shape}")
    x = a.data
    mu = x.mean(axis=1, keepdims=True)
    d = x - mu
    var = (d * d).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + a.dtype.type(eps))
    xhat = (d * inv).astype(a.dtype)
    out = (xhat * gain.data + bias.data).astype(a.dtype)

    def grad_fn(g):
        dxhat = g * gain.data
        m1 = dxhat.mean(axis=1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
        dx = (inv * (dxhat - m1 - xhat * m2)).astype(a.dtype)
        return (dx, (g * xhat).sum(axis=0), g.sum(axis=0))

    return _result(out, (a, gain, bias), grad_fn)


def l2_normalize(v: Tensor) -> Tensor:
    """v / ||v||; a zero vector has no direction and is rejected."""
    if v.ndim != 1:
        raise DimensionError(f"l2_normalize needs a vector, got shape {v.shape}")
    norm = float(np.linalg.norm(v.data))
    if norm < float(np.finfo(v.dtype).tiny):
        raise DegenerateInputError("cannot normalize a zero vector")
    y = (v.data / v.dtype.type(norm)).astype(v.dtype)

    def grad_fn(g):
        return (((g - y * (y @ g)) / v.dtype.type(norm)).astype(v.dtype),)

    return _result(y, (v,), grad_fn)


def cosine(a: Tensor, b: Tensor) -> Tensor:
    """Cosine similarity of two vectors (scale-free in both arguments)."""
    return dot(l2_normalize(a), l2_normalize(b))


def causal_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Single-head scaled dot-product attention with a causal mask.

    Position i attends to positions j <= i. Masked scores get -1e9 before
    the softmax, which underflows to an exact zero weight, so gradients
    through masked paths vanish identically.
    """
    _same_dtype(q, k, v)
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise DimensionError("causal_attention needs matrices")
    if q.shape != k.shape or q.shape[0] != v.shape[0]:
        raise DimensionError(
            f"causal_attention: incompatible shapes {q.shape}, {k.shape}, {v.shape}"
        )
    length, head_dim = q.shape
    scores = scale(matmul(q, transpose(k)), 1.0 / math.sqrt(head_dim))
    mask = constant(np.triu(np.full((length, length), -1e9), k=1), dtype=q.dtype)
    weights = softmax_rows(add(scores, mask))
    return matmul(weights, v)
