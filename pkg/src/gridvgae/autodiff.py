"""Dense 2-D tensors with tape-based reverse-mode differentiation.

Every primitive takes and returns :class:`Tensor` objects holding 64-bit row-major
matrices. When any input requires a gradient and a :class:`Tape` is active on the
current thread, the primitive appends a record (output, inputs, vector-Jacobian
product) to that tape. :func:`backward` replays the records in reverse.

Broadcasting is limited to adding a ``(1, c)`` row vector to an ``(r, c)`` matrix.

Forward matrix products use a plain ``einsum`` contraction instead of BLAS so each
output entry depends only on the values of its own row and column. Relabeling
nodes therefore permutes outputs bit-for-bit.
"""
from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got array of shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = None
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data, False)

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of primitive applications; use as a context manager."""

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise RuntimeError("tape stack corrupted: exiting a tape that is not innermost")
        stack.pop()
        return False

    def record(self, out: Tensor, inputs: tuple, vjp: Callable):
        self.records.append((out, inputs, vjp))

    def backward(self, loss: Tensor):
        backward(self, loss)

    def __len__(self):
        return len(self.records)


def backward(tape: Tape, loss: Tensor):
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tensor on the tape that requires grad."""
    if loss.shape != (1, 1):
        raise ShapeError(f"backward needs a scalar (1x1) loss, got shape {loss.shape}")
    if not any(rec[0] is loss for rec in reversed(tape.records)):
        raise ValueError("loss was not recorded on this tape")
    adj: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    holders: dict[int, Tensor] = {id(loss): loss}
    for out, inputs, vjp in reversed(tape.records):
        g = adj.pop(id(out), None)
        if g is None:
            continue
        holders.pop(id(out), None)
        out.grad = g.copy() if out.grad is None else out.grad + g
        for inp, gi in zip(inputs, vjp(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in adj:
                adj[key] = adj[key] + gi
            else:
                adj[key] = gi
                holders[key] = inp
    # what is left belongs to leaves
    for key, g in adj.items():
        t = holders[key]
        t.grad = g.copy() if t.grad is None else t.grad + g


def _out(arr: np.ndarray, inputs: tuple, vjp: Callable) -> Tensor:
    req = any(t.requires_grad for t in inputs)
    out = Tensor._wrap(arr, req)
    if req:
        tape = active_tape()
        if tape is not None:
            tape.record(out, inputs, vjp)
    return out


def _same_shape(op: str, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# --------------------------------------------------------------------------
# primitives

def contract(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Position-independent matrix product (see module docstring)."""
    return np.einsum("ik,kj->ij", a, b, optimize=False)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shape mismatch {a.shape} @ {b.shape}")
    A, B = a.data, b.data

    def vjp(g):
        return (g @ B.T if a.requires_grad else None,
                A.T @ g if b.requires_grad else None)

    return _out(contract(A, B), (a, b), vjp)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may also be a ``(1, c)`` row vector added to every row."""
    if a.shape == b.shape:
        return _out(a.data + b.data, (a, b), lambda g: (g, g))
    if b.shape == (1, a.shape[1]):
        return _out(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=0, keepdims=True)))
    raise ShapeError(f"add: shape mismatch {a.shape} vs {b.shape}")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _out(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    A, B = a.data, b.data
    return _out(A * B, (a, b), lambda g: (g * B, g * A))


def scale(a: Tensor, c: float) -> Tensor:
    return _out(a.data * c, (a,), lambda g: (g * c,))


def transpose(a: Tensor) -> Tensor:
    return _out(np.ascontiguousarray(a.data.T), (a,), lambda g: (np.ascontiguousarray(g.T),))


def reshape(a: Tensor, rows: int, cols: int) -> Tensor:
    if rows * cols != a.data.size:
        raise ShapeError(f"reshape: cannot view {a.shape} as {(rows, cols)}")
    shape = a.shape
    return _out(a.data.reshape(rows, cols), (a,), lambda g: (g.reshape(shape),))


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    parts = tuple(parts)
    cols = {p.shape[1] for p in parts}
    if len(cols) != 1:
        raise ShapeError(f"concat_rows: column mismatch {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def vjp(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _out(np.concatenate([p.data for p in parts], axis=0), parts, vjp)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    parts = tuple(parts)
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise ShapeError(f"concat_cols: row mismatch {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])

    def vjp(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _out(np.concatenate([p.data for p in parts], axis=1), parts, vjp)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _softplus(x: np.ndarray) -> np.ndarray:
    # log(1 + e^x) without overflow
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    return _out(s, (a,), lambda g: (g * s * (1.0 - s),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _out(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)
    return _out(e, (a,), lambda g: (g * e,))


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data > lo) & (a.data < hi)
    return _out(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


def tensor_sum(a: Tensor) -> Tensor:
    shape = a.shape
    return _out(np.array([[a.data.sum()]]), (a,), lambda g: (np.full(shape, g[0, 0]),))


def mean(a: Tensor) -> Tensor:
    shape = a.shape
    n = a.data.size
    return _out(np.array([[a.data.sum() / n]]), (a,), lambda g: (np.full(shape, g[0, 0] / n),))


LAYER_NORM_EPS = 1e-5


def layer_norm(x: Tensor, gain: Tensor | None = None, bias: Tensor | None = None,
               eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize each row to zero mean, unit variance; then optional ``gain``/``bias`` rows.

    The variance is the biased (population) one and the denominator is
    ``sqrt(var + eps)``, so a constant row maps to zeros.
    """
    X = x.data
    f = X.shape[1]
    for name, t in (("gain", gain), ("bias", bias)):
        if t is not None and t.shape != (1, f):
            raise ShapeError(f"layer_norm: {name} must be (1, {f}), got {t.shape}")
    mu = X.mean(axis=1, keepdims=True)
    xc = X - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat
    if gain is not None:
        out = out * gain.data
    if bias is not None:
        out = out + bias.data
    inputs = tuple(t for t in (x, gain, bias) if t is not None)

    def vjp(g):
        dxhat = g * gain.data if gain is not None else g
        dx = inv * (dxhat - dxhat.mean(axis=1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=1, keepdims=True))
        grads = [dx]
        if gain is not None:
            grads.append((g * xhat).sum(axis=0, keepdims=True))
        if bias is not None:
            grads.append(g.sum(axis=0, keepdims=True))
        return tuple(grads)

    return _out(out, inputs, vjp)


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout. Identity (the same tensor) outside training or when ``p == 0``."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {p}")
    if not train or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return _out(x.data * keep, (x,), lambda g: (g * keep,))


def bce_with_logits(logits: Tensor, targets, pos_weight: float = 1.0, mask=None) -> Tensor:
    """Mean of ``-[w t log s(x) + (1 - t) log(1 - s(x))]`` over entries (or masked entries)."""
    t = targets.data if isinstance(targets, Tensor) else np.asarray(targets, dtype=np.float64)
    if t.shape != logits.shape:
        raise ShapeError(f"bce_with_logits: shape mismatch {logits.shape} vs {t.shape}")
    if not np.all((t == 0.0) | (t == 1.0)):
        raise ValueError("bce_with_logits: targets must be 0/1")
    if not pos_weight > 0:
        raise ValueError(f"bce_with_logits: pos_weight must be > 0, got {pos_weight}")
    x = logits.data
    if mask is None:
        m = np.ones_like(x)
    else:
        m = np.asarray(mask, dtype=np.float64)
        if m.shape != x.shape:
            raise ShapeError(f"bce_with_logits: mask shape {m.shape} vs {x.shape}")
    count = m.sum()
    if count == 0:
        raise ValueError("bce_with_logits: mask selects no entries")
    # -log s(x) = softplus(-x);  -log(1 - s(x)) = softplus(x)
    per = pos_weight * t * _softplus(-x) + (1.0 - t) * _softplus(x)
    loss = (per * m).sum() / count

    def vjp(g):
        s = _sigmoid(x)
        d = pos_weight * t * (s - 1.0) + (1.0 - t) * s
        return (g[0, 0] * d * m / count,)

    return _out(np.array([[loss]]), (logits,), vjp)


class Propagation:
    """Symmetric-normalized aggregation ``D^-1/2 (A + I) D^-1/2`` over a fixed edge set.

    Neighbour contributions are sorted before summation, so the result for a
    node depends only on the multiset of its contributions and not on labels.
    """

    def __init__(self, n_nodes: int, edges: np.ndarray):
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        self.n_nodes = n = int(n_nodes)
        deg = np.ones(n)
        np.add.at(deg, edges[:, 0], 1.0)
        np.add.at(deg, edges[:, 1], 1.0)
        src = np.concatenate([np.arange(n), edges[:, 0], edges[:, 1]])
        dst = np.concatenate([np.arange(n), edges[:, 1], edges[:, 0]])
        width = int(deg.max()) if n else 1
        order = np.argsort(src, kind="stable")
        src, dst = src[order], dst[order]
        starts = np.searchsorted(src, np.arange(n))
        slot = np.arange(len(src)) - starts[src]
        nbr = np.repeat(np.arange(n)[:, None], width, axis=1)
        coef = np.zeros((n, width))
        nbr[src, slot] = dst
        coef[src, slot] = 1.0 / np.sqrt(deg[src] * deg[dst])
        self.neighbors = nbr
        self.coef = coef
        self.degree = deg

    def apply(self, h: np.ndarray, exact: bool = True) -> np.ndarray:
        terms = self.coef[:, :, None] * h[self.neighbors]
        if exact:
            terms = np.sort(terms, axis=1)
        return terms.sum(axis=1)

    def dense(self) -> np.ndarray:
        m = np.zeros((self.n_nodes, self.n_nodes))
        np.add.at(m, (np.repeat(np.arange(self.n_nodes), self.coef.shape[1]), self.neighbors.ravel()),
                  self.coef.ravel())
        return m


def propagate(h: Tensor, prop: Propagation) -> Tensor:
    if h.shape[0] != prop.n_nodes:
        raise ShapeError(f"propagate: features have {h.shape[0]} rows for {prop.n_nodes} nodes")
    # the operator is symmetric, so its adjoint is itself
    return _out(prop.apply(h.data), (h,), lambda g: (prop.apply(g, exact=False),))


def center_columns(h: Tensor) -> Tensor:
    """Subtract each column's mean over rows.

    The forward mean sums sorted values, so permuting rows permutes the
    output bit for bit.
    """
    n = h.shape[0]
    mu = np.sort(h.data, axis=0).sum(axis=0, keepdims=True) / n
    return _out(h.data - mu, (h,), lambda g: (g - g.mean(axis=0, keepdims=True),))


def pair_sum(u: Tensor, v: Tensor) -> Tensor:
    """Row ``i * m + j`` of the result is ``u[i] + v[j]``; shape ``(n * m, c)``."""
    if u.shape[1] != v.shape[1]:
        raise ShapeError(f"pair_sum: column mismatch {u.shape} vs {v.shape}")
    n, c = u.shape
    m = v.shape[0]
    out = (u.data[:, None, :] + v.data[None, :, :]).reshape(n * m, c)

    def vjp(g):
        g3 = g.reshape(n, m, c)
        return g3.sum(axis=1), g3.sum(axis=0)

    return _out(out, (u, v), vjp)


# --------------------------------------------------------------------------
# finite-difference verification

def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-6) -> float:
    """Max over entries of ``|analytic - central| / max(1, |central|)`` for scalar ``f``."""
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    base = np.array(x.data, dtype=np.float64)
    probe = Tensor(base, requires_grad=True)
    with Tape() as tape:
        out = f(probe)
    if out.shape != (1, 1):
        raise ShapeError(f"grad_check: f must return a scalar, got {out.shape}")
    if not np.isfinite(out.data).all():
        raise FloatingPointError("grad_check: f is not finite at x")
    backward(tape, out)
    analytic = probe.grad if probe.grad is not None else np.zeros_like(base)

    numeric = np.zeros_like(base)
    flat = numeric.reshape(-1)
    for k in range(base.size):
        vals = []
        for step in (eps, -eps):
            shifted = base.copy().reshape(-1)
            shifted[k] += step
            vals.append(f(Tensor(shifted.reshape(base.shape))).item())
        if not np.all(np.isfinite(vals)):
            raise FloatingPointError(f"grad_check: f is not finite near entry {k}")
        flat[k] = (vals[0] - vals[1]) / (2.0 * eps)
    if not np.isfinite(analytic).all():
        raise FloatingPointError("grad_check: analytic gradient is not finite")
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))))
