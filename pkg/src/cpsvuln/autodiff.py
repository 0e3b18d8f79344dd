"""Minimal reverse-mode automatic differentiation over dense real arrays.

Supports exactly what the attack-synthesis training loop needs: affine
layers with ReLU, quadratic residue penalties, smoothed norms, and plain
SGD.  Scalars/vectors/matrices only, no broadcasting beyond adding a row
vector to a matrix, no higher-order derivatives.

A ``Tape`` records primitive operations while it is active (``with
Tape() as tape``); ``backward`` replays it in reverse.  Tapes are
thread-local, so independent training loops may run in parallel threads
as long as each owns its tensors.
"""

from __future__ import annotations

import threading

import numpy as np

__all__ = [
    "DimensionError",
    "Tensor",
    "Tape",
    "backward",
    "sgd_step",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "relu",
    "concat",
    "sum_all",
    "weighted_sum",
    "weighted_quadratic",
    "rowwise_quadratic",
    "rowwise_matvec",
    "smooth_norm",
    "rowwise_smooth_norm",
    "observe_vec",
    "observe_rows",
]


class DimensionError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class Tensor:
    """Dense float64 array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"


class _Node:
    """One recorded primitive: output, differentiable inputs, local grad."""

    __slots__ = ("output", "inputs", "grad_fn")

    def __init__(self, output, inputs, grad_fn):
        self.output = output
        self.inputs = inputs
        self.grad_fn = grad_fn


_ACTIVE = threading.local()


def _active_tape():
    stack = getattr(_ACTIVE, "stack", None)
    return stack[-1] if stack else None


class Tape:
    """Ordered record of primitives; inputs always precede their consumers."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        stack = getattr(_ACTIVE, "stack", None)
        if stack is None:
            stack = _ACTIVE.stack = []
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _ACTIVE.stack.pop()
        return False

    def _record(self, output, inputs, grad_fn):
        self.nodes.append(_Node(output, inputs, grad_fn))


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out: Tensor, inputs, grad_fn) -> Tensor:
    """Attach ``out`` to the active tape if any input is differentiable."""
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape._record(out, inputs, grad_fn)
    return out


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix/vector product with numpy semantics, 1-D and 2-D operands only."""
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim not in (1, 2) or bd.ndim not in (1, 2):
        raise DimensionError(f"matmul supports 1-D/2-D operands, got {ad.shape} @ {bd.shape}")
    if ad.shape[-1] != (bd.shape[0] if bd.ndim > 1 else bd.shape[0]):
        raise DimensionError(f"inner dimensions disagree: {ad.shape} @ {bd.shape}")
    out = Tensor(ad @ bd)

    def grad_fn(delta):
        grads = []
        if a.requires_grad:
            if ad.ndim == 1 and bd.ndim == 2:
                grads.append(bd @ delta)
            elif ad.ndim == 2 and bd.ndim == 1:
                grads.append(np.outer(delta, bd))
            else:
                grads.append(delta @ bd.T)
        else:
            grads.append(None)
        if b.requires_grad:
            if ad.ndim == 1 and bd.ndim == 2:
                grads.append(np.outer(ad, delta))
            elif ad.ndim == 2 and bd.ndim == 1:
                grads.append(ad.T @ delta)
            else:
                grads.append(ad.T @ delta)
        else:
            grads.append(None)
        return grads

    return _record(out, (a, b), grad_fn)


def _unbroadcast(delta, shape):
    if delta.shape == shape:
        return delta
    # only matrix-plus-row-vector broadcasting is supported
    return delta.sum(axis=0)


def add(a, b) -> Tensor:
    """Elementwise sum; a (N,d) matrix may take a (d,) row vector."""
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data + b.data)

    def grad_fn(delta):
        return [
            _unbroadcast(delta, a.data.shape) if a.requires_grad else None,
            _unbroadcast(delta, b.data.shape) if b.requires_grad else None,
        ]

    return _record(out, (a, b), grad_fn)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data - b.data)

    def grad_fn(delta):
        return [
            _unbroadcast(delta, a.data.shape) if a.requires_grad else None,
            _unbroadcast(-delta, b.data.shape) if b.requires_grad else None,
        ]

    return _record(out, (a, b), grad_fn)


def mul(a, b) -> Tensor:
    """Elementwise product; same shapes, or (N,d) times a (d,) row vector."""
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data * b.data)

    def grad_fn(delta):
        return [
            _unbroadcast(delta * b.data, a.data.shape) if a.requires_grad else None,
            _unbroadcast(delta * a.data, b.data.shape) if b.requires_grad else None,
        ]

    return _record(out, (a, b), grad_fn)


def scale(x, c: float) -> Tensor:
    x = _as_tensor(x)
    c = float(c)
    out = Tensor(x.data * c)
    return _record(out, (x,), lambda delta: [delta * c])


def relu(x) -> Tensor:
    """Elementwise max(0, x); subgradient at exactly 0 is 0."""
    x = _as_tensor(x)
    out = Tensor(np.maximum(x.data, 0.0))
    mask = x.data > 0.0
    return _record(out, (x,), lambda delta: [delta * mask])


def concat(a, b) -> Tensor:
    """Concatenate two 1-D tensors."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 1 or b.data.ndim != 1:
        raise DimensionError("concat expects 1-D tensors")
    out = Tensor(np.concatenate([a.data, b.data]))
    na = a.data.shape[0]

    def grad_fn(delta):
        return [
            delta[:na] if a.requires_grad else None,
            delta[na:] if b.requires_grad else None,
        ]

    return _record(out, (a, b), grad_fn)


def sum_all(x) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(np.sum(x.data))
    shape = x.data.shape
    return _record(out, (x,), lambda delta: [np.full(shape, float(delta))])


def weighted_sum(x, w) -> Tensor:
    """Scalar ``sum(w_i * x_i)`` for a 1-D tensor and constant weights."""
    x = _as_tensor(x)
    w = np.asarray(w, dtype=np.float64)
    if x.data.shape != w.shape:
        raise DimensionError(f"weight shape {w.shape} != value shape {x.data.shape}")
    out = Tensor(np.dot(x.data, w))
    return _record(out, (x,), lambda delta: [float(delta) * w])


def weighted_quadratic(z, sinv) -> Tensor:
    """Quadratic form z^T Sinv z for a vector z and constant SPD matrix Sinv."""
    z = _as_tensor(z)
    sinv = np.asarray(sinv, dtype=np.float64)
    if sinv.ndim != 2 or sinv.shape[0] != sinv.shape[1]:
        raise DimensionError(f"weight matrix must be square, got {sinv.shape}")
    if z.data.ndim != 1 or z.data.shape[0] != sinv.shape[0]:
        raise DimensionError(f"vector shape {z.data.shape} incompatible with {sinv.shape}")
    sz = sinv @ z.data
    out = Tensor(float(z.data @ sz))
    return _record(out, (z,), lambda delta: [2.0 * float(delta) * sz])


def rowwise_quadratic(Z, sinv_stack) -> Tensor:
    """Per-row quadratic forms: out[j] = Z[j]^T Sinv[j] Z[j]."""
    Z = _as_tensor(Z)
    S = np.asarray(sinv_stack, dtype=np.float64)
    if Z.data.ndim != 2 or S.ndim != 3 or S.shape[0] != Z.data.shape[0]:
        raise DimensionError(f"rowwise_quadratic: {Z.data.shape} vs stack {S.shape}")
    sz = np.einsum("npq,nq->np", S, Z.data)
    out = Tensor(np.einsum("np,np->n", Z.data, sz))
    return _record(out, (Z,), lambda delta: [2.0 * delta[:, None] * sz])


def rowwise_matvec(mat_stack, Z) -> Tensor:
    """Per-row matrix-vector products: out[j] = M[j] @ Z[j] (constant M)."""
    Z = _as_tensor(Z)
    M = np.asarray(mat_stack, dtype=np.float64)
    if Z.data.ndim != 2 or M.ndim != 3 or M.shape[0] != Z.data.shape[0]:
        raise DimensionError(f"rowwise_matvec: {Z.data.shape} vs stack {M.shape}")
    out = Tensor(np.einsum("nop,np->no", M, Z.data))
    return _record(out, (Z,), lambda delta: [np.einsum("nop,no->np", M, delta)])


def smooth_norm(x, eps: float) -> Tensor:
    """sqrt(sum(x^2) + eps); differentiable at x = 0 for eps > 0."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = _as_tensor(x)
    val = float(np.sqrt(np.sum(x.data * x.data) + eps))
    out = Tensor(val)
    return _record(out, (x,), lambda delta: [float(delta) * x.data / val])


def rowwise_smooth_norm(X, eps: float) -> Tensor:
    """Per-row smoothed Euclidean norms of a (N,d) tensor."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    X = _as_tensor(X)
    if X.data.ndim != 2:
        raise DimensionError("rowwise_smooth_norm expects a 2-D tensor")
    val = np.sqrt(np.sum(X.data * X.data, axis=1) + eps)
    out = Tensor(val)
    return _record(out, (X,), lambda delta: [(delta / val)[:, None] * X.data])


def observe_vec(x, h_fn, jac_fn) -> Tensor:
    """Apply a nonlinear observation map to one state vector.

    Backward uses the observation Jacobian at the forward point.
    """
    x = _as_tensor(x)
    if x.data.ndim != 1:
        raise DimensionError("observe_vec expects a 1-D tensor")
    out = Tensor(np.asarray(h_fn(x.data), dtype=np.float64))
    J = np.asarray(jac_fn(x.data), dtype=np.float64)
    return _record(out, (x,), lambda delta: [J.T @ delta])


def observe_rows(X, h_fn, jac_fn) -> Tensor:
    """Apply a nonlinear observation map row by row.

    Backward uses the observation Jacobian at each forward point, so this
    is exact for the recorded linearization.
    """
    X = _as_tensor(X)
    if X.data.ndim != 2:
        raise DimensionError("observe_rows expects a 2-D tensor")
    rows = np.stack([np.asarray(h_fn(x), dtype=np.float64) for x in X.data])
    jacs = [np.asarray(jac_fn(x), dtype=np.float64) for x in X.data]
    out = Tensor(rows)

    def grad_fn(delta):
        return [np.stack([J.T @ d for J, d in zip(jacs, delta)])]

    return _record(out, (X,), grad_fn)


# ---------------------------------------------------------------------------
# backward pass and SGD
# ---------------------------------------------------------------------------


def backward(loss: Tensor, tape: Tape) -> dict:
    """Populate ``grad`` on every differentiable tensor recorded on the tape.

    Returns a map from tensor to gradient array.  Tensors that require a
    gradient but do not influence the loss receive zeros.
    """
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        raise ValueError("backward expects a scalar loss tensor")
    accum: dict[int, np.ndarray] = {id(loss): np.asarray(1.0)}
    seen: dict[int, Tensor] = {id(loss): loss}
    for node in reversed(tape.nodes):
        seen.setdefault(id(node.output), node.output)
        for t in node.inputs:
            seen.setdefault(id(t), t)
        delta = accum.get(id(node.output))
        if delta is None:
            continue
        for t, g in zip(node.inputs, node.grad_fn(delta)):
            if g is None or not t.requires_grad:
                continue
            key = id(t)
            if key in accum:
                accum[key] = accum[key] + g
            else:
                accum[key] = np.array(g, dtype=np.float64, copy=True)
    result = {}
    for key, t in seen.items():
        if not t.requires_grad:
            continue
        g = accum.get(key)
        if g is None:
            g = np.zeros_like(t.data)
        g = np.asarray(g, dtype=np.float64).reshape(t.data.shape)
        t.grad = g
        result[t] = g
    return result


def sgd_step(params, beta: float) -> None:
    """In-place gradient step ``p <- p - beta * p.grad``; grads are cleared."""
    if beta <= 0:
        raise ValueError("learning rate must be positive")
    for p in params:
        if p.grad is None:
            raise RuntimeError("sgd_step: parameter has no gradient (run backward first)")
    for p in params:
        p.data -= beta * p.grad
        p.grad = None
