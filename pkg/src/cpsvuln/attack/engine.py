"""Objective and gradient evaluation for the online training loop.

Each training step minimizes a weighted sum of per-step costs

    J_j = g_j - delta * ||y_j - h(x_hat_j)||_smooth

replayed over the whole attack history under the current generator
parameters, with the stored filter quantities of each step held
constant.  This replay dominates the runtime of attack synthesis, so two
interchangeable engines provide it:

* a pure-Python engine that builds the computation on the autodiff tape
  (always available, and the reference the compiled path is tested
  against), and
* a compiled Cython kernel (``cpsvuln.attack._replay``) selected at
  import when present and the plant's observation map is linear.

Set ``CPSVULN_PURE_PYTHON=1`` to force the tape engine.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from .generators import DfnnGenerator, FnnGenerator, _mlp_forward_tape

try:
    from . import _replay as _fast
except ImportError:  # pragma: no cover - build-dependent
    _fast = None

__all__ = [
    "ReplayData",
    "instantaneous_cost",
    "tape_observation",
    "fnn_objective_and_grads",
    "dfnn_objective_and_grads",
    "backend_name",
    "compiled_available",
]


def _force_pure() -> bool:
    return os.environ.get("CPSVULN_PURE_PYTHON", "0") not in ("", "0")


def compiled_available() -> bool:
    return _fast is not None


def backend_name() -> str:
    return "compiled" if (_fast is not None and not _force_pure()) else "python"


@dataclass
class ReplayData:
    """Stacked per-step constants for replaying the attack history.

    ``X`` holds normalized generator inputs (FNN) and ``Yn`` normalized
    measurements (dFNN); the remaining arrays are raw filter quantities.
    ``HL[j] = H @ L[j]`` is precomputed for linear observation maps.
    """

    Y: np.ndarray
    HXP: np.ndarray
    XP: np.ndarray
    L: np.ndarray
    Sinv: np.ndarray
    X: np.ndarray | None = None
    Yn: np.ndarray | None = None
    HL: np.ndarray | None = None
    model: object | None = None

    @property
    def h_linear(self) -> bool:
        return self.model is not None and getattr(self.model, "h_matrix", None) is not None


def tape_observation(model):
    """Observation map as a tape-aware callable (exact for linear maps)."""
    H = getattr(model, "h_matrix", None)
    if H is not None:
        return lambda xh: ad.matmul(H, xh)
    return lambda xh: ad.observe_vec(xh, model.h, model.dhdx)


def instantaneous_cost(g_a, y, x_hat_a, h_fn, delta: float, eps: float = 1e-12):
    """Stealth penalty minus scaled estimation-error proxy for one step."""
    err = ad.sub(y, h_fn(x_hat_a))
    return ad.sub(g_a, ad.scale(ad.smooth_norm(err, eps), delta))


# ---------------------------------------------------------------------------
# tape engine
# ---------------------------------------------------------------------------


def _fnn_tape(gen: FnnGenerator, data: ReplayData, delta, eps, weights):
    mask = gen.support.mask()
    with ad.Tape() as tape:
        out = _mlp_forward_tape(gen.layers, ad.Tensor(data.X))
        a = ad.mul(out, mask)
        z = ad.sub(ad.add(a, data.Y), data.HXP)
        g = ad.rowwise_quadratic(z, data.Sinv)
        xh = ad.add(ad.rowwise_matvec(data.L, z), data.XP)
        if data.h_linear:
            hxh = ad.matmul(xh, data.model.h_matrix.T)
        else:
            hxh = ad.observe_rows(xh, data.model.h, data.model.dhdx)
        err = ad.sub(data.Y, hxh)
        j_vec = ad.sub(g, ad.scale(ad.rowwise_smooth_norm(err, eps), delta))
        total = ad.weighted_sum(j_vec, weights)
    grad_map = ad.backward(total, tape)
    return total.item(), [grad_map[p] for p in gen.parameters()]


def _dfnn_tape(gen: DfnnGenerator, data: ReplayData, delta, eps, weights, r0):
    mask = gen.support.mask()
    h_fn = tape_observation(data.model)
    n_steps = data.Y.shape[0]
    with ad.Tape() as tape:
        r = ad.Tensor(r0)
        total = None
        for j in range(n_steps):
            r = _mlp_forward_tape(gen.layers, ad.concat(ad.Tensor(data.Yn[j]), r))
            a = ad.mul(ad.matmul(r, gen.W_out), mask)
            z = ad.sub(ad.add(a, data.Y[j]), data.HXP[j])
            g_a = ad.weighted_quadratic(z, data.Sinv[j])
            xh = ad.add(ad.matmul(data.L[j], z), data.XP[j])
            term = ad.scale(instantaneous_cost(g_a, data.Y[j], xh, h_fn, delta, eps), weights[j])
            total = term if total is None else ad.add(total, term)
    grad_map = ad.backward(total, tape)
    return total.item(), [grad_map[p] for p in gen.parameters()]


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def _weight_arrays(gen):
    Ws = [W.data for W, _ in gen.layers]
    bs = [b.data for _, b in gen.layers]
    return Ws, bs


def fnn_objective_and_grads(gen: FnnGenerator, data: ReplayData, delta, eps, weights):
    """Total replay objective and gradients aligned with gen.parameters()."""
    weights = np.asarray(weights, dtype=np.float64)
    if _fast is not None and not _force_pure() and data.h_linear:
        Ws, bs = _weight_arrays(gen)
        dWs = [np.zeros_like(W) for W in Ws]
        dbs = [np.zeros_like(b) for b in bs]
        total = _fast.fnn_replay(
            Ws, bs, data.X, data.Y - data.HXP, data.HL, data.Sinv,
            gen.support.mask(), weights, float(delta), float(eps), dWs, dbs,
        )
        grads = []
        for dW, db in zip(dWs, dbs):
            grads.extend((dW, db))
        return total, grads
    return _fnn_tape(gen, data, delta, eps, weights)


def dfnn_objective_and_grads(gen: DfnnGenerator, data: ReplayData, delta, eps, weights, r0=None):
    """Replay objective/gradients with the latent chain rebuilt from ``r0``."""
    weights = np.asarray(weights, dtype=np.float64)
    if r0 is None:
        r0 = np.zeros(gen.latent_dim)
    if _fast is not None and not _force_pure() and data.h_linear:
        Ws, bs = _weight_arrays(gen)
        dWs = [np.zeros_like(W) for W in Ws]
        dbs = [np.zeros_like(b) for b in bs]
        dWout = np.zeros_like(gen.W_out.data)
        total = _fast.dfnn_replay(
            Ws, bs, gen.W_out.data, data.Yn, data.Y - data.HXP, data.HL, data.Sinv,
            gen.support.mask(), weights, float(delta), float(eps), np.asarray(r0, dtype=np.float64),
            dWs, dbs, dWout,
        )
        grads = []
        for dW, db in zip(dWs, dbs):
            grads.extend((dW, db))
        grads.append(dWout)
        return total, grads
    return _dfnn_tape(gen, data, delta, eps, weights, np.asarray(r0, dtype=np.float64))
