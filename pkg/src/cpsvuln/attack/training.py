"""Online gradient-based training of the neural attack generators.

At every attacked step the trainer records the filter's current
prediction, gain and innovation covariance, then runs an inner gradient
loop on the cumulative objective (current-step cost plus a
lambda-weighted sum of all earlier costs, each replayed under the
current parameters) and finally applies the attack produced by the
freshly trained generator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from . import engine
from .generators import DfnnGenerator, FnnGenerator

__all__ = [
    "TrainingError",
    "TrainingConfig",
    "HistoryBuffer",
    "StepDiagnostics",
    "train_step_fnn",
    "train_step_dfnn",
]


class TrainingError(RuntimeError):
    """Objective became non-finite during the inner loop."""


@dataclass
class TrainingConfig:
    """Hyperparameters of the online attack-synthesis loop.

    ``delta`` trades estimation-error growth against stealth, ``lam``
    weights the replayed history, ``beta`` is the SGD learning rate and
    ``horizon_T`` the number of trained steps.  The inner loop stops when
    the gradient infinity-norm drops below ``inner_tol`` or after
    ``inner_max`` iterations.  ``grad_clip`` (optional) rescales a
    gradient whose infinity-norm exceeds it; deep generators can
    otherwise blow up once the attack leaves the nominal regime.
    """

    delta: float = 0.2
    lam: float = 0.05
    beta: float = 1e-3
    horizon_T: int = 1000
    inner_max: int = 20
    inner_tol: float = 1e-4
    eps_smooth: float = 1e-12
    grad_clip: float | None = None

    def validate(self):
        if self.delta < 0 or self.lam < 0:
            raise ValueError("delta and lambda must be nonnegative")
        if self.beta <= 0 or self.horizon_T <= 0 or self.inner_max <= 0:
            raise ValueError("beta, horizon_T, inner_max must be positive")
        if self.inner_tol <= 0 or self.eps_smooth <= 0:
            raise ValueError("inner_tol and eps_smooth must be positive")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ValueError("grad_clip must be positive when set")
        return self

    def as_dict(self) -> dict:
        return {
            "delta": self.delta, "lambda": self.lam, "beta": self.beta,
            "T": self.horizon_T, "inner_max": self.inner_max,
            "inner_tol": self.inner_tol, "eps_smooth": self.eps_smooth,
        }


class HistoryBuffer:
    """Append-only store of per-step constants for history replay."""

    def __init__(self, model):
        self.model = model
        self._x_in: list[np.ndarray] = []
        self._yn: list[np.ndarray] = []
        self._y: list[np.ndarray] = []
        self._hxp: list[np.ndarray] = []
        self._xp: list[np.ndarray] = []
        self._L: list[np.ndarray] = []
        self._sinv: list[np.ndarray] = []
        self._stacked: engine.ReplayData | None = None

    def __len__(self):
        return len(self._y)

    def append(self, *, y, hxp, xp, L, sinv, x_in=None, yn=None):
        self._y.append(np.asarray(y, dtype=np.float64).copy())
        self._hxp.append(np.asarray(hxp, dtype=np.float64).copy())
        self._xp.append(np.asarray(xp, dtype=np.float64).copy())
        self._L.append(np.asarray(L, dtype=np.float64).copy())
        self._sinv.append(np.asarray(sinv, dtype=np.float64).copy())
        if x_in is not None:
            self._x_in.append(np.asarray(x_in, dtype=np.float64).copy())
        if yn is not None:
            self._yn.append(np.asarray(yn, dtype=np.float64).copy())
        self._stacked = None

    def stacked(self) -> engine.ReplayData:
        if self._stacked is None:
            L = np.ascontiguousarray(np.stack(self._L))
            H = getattr(self.model, "h_matrix", None)
            self._stacked = engine.ReplayData(
                Y=np.ascontiguousarray(np.stack(self._y)),
                HXP=np.ascontiguousarray(np.stack(self._hxp)),
                XP=np.ascontiguousarray(np.stack(self._xp)),
                L=L,
                Sinv=np.ascontiguousarray(np.stack(self._sinv)),
                X=np.ascontiguousarray(np.stack(self._x_in)) if self._x_in else None,
                Yn=np.ascontiguousarray(np.stack(self._yn)) if self._yn else None,
                HL=np.ascontiguousarray(np.einsum("qn,jnp->jqp", H, L)) if H is not None else None,
                model=self.model,
            )
        return self._stacked

    def objective_weights(self, lam: float) -> np.ndarray:
        """History terms weighted by lambda, the current step by one.

        The weights are normalized to unit mass so the gradient scale does
        not grow with the buffer length; the minimizer at each step is
        unchanged and a single learning rate serves the whole horizon.
        """
        w = np.full(len(self), float(lam))
        if len(w):
            w[-1] = 1.0
        return w / w.sum()


@dataclass
class StepDiagnostics:
    """Inner-loop bookkeeping for one trained step."""

    step: int
    iterations: int
    initial_objective: float
    final_objective: float
    grad_norm: float


def _grad_inf_norm(grads) -> float:
    return max((float(np.max(np.abs(g))) if g.size else 0.0) for g in grads)


def _inner_loop(gen, cfg: TrainingConfig, step_index: int, evaluate) -> StepDiagnostics:
    params = gen.parameters()
    initial = None
    gnorm = np.inf
    iterations = 0
    for _ in range(cfg.inner_max):
        total, grads = evaluate()
        if not np.isfinite(total):
            raise TrainingError(f"objective diverged at step {step_index} (J'={total})")
        if initial is None:
            initial = total
        gnorm = _grad_inf_norm(grads)
        if gnorm < cfg.inner_tol:
            break
        if cfg.grad_clip is not None and gnorm > cfg.grad_clip:
            scale = cfg.grad_clip / gnorm
            grads = [g * scale for g in grads]
        for p, g in zip(params, grads):
            p.grad = g
        ad.sgd_step(params, cfg.beta)
        iterations += 1
    final, _ = evaluate()
    if not np.isfinite(final):
        raise TrainingError(f"objective diverged at step {step_index} (J'={final})")
    return StepDiagnostics(
        step=step_index, iterations=iterations,
        initial_objective=float(initial), final_objective=float(final), grad_norm=float(gnorm),
    )


def train_step_fnn(gen: FnnGenerator, buffer: HistoryBuffer, cfg: TrainingConfig, step_index: int) -> StepDiagnostics:
    """Inner gradient loop for one step; the buffer already holds it."""
    data = buffer.stacked()
    weights = buffer.objective_weights(cfg.lam)
    return _inner_loop(
        gen, cfg, step_index,
        lambda: engine.fnn_objective_and_grads(gen, data, cfg.delta, cfg.eps_smooth, weights),
    )


def train_step_dfnn(gen: DfnnGenerator, buffer: HistoryBuffer, cfg: TrainingConfig, step_index: int) -> StepDiagnostics:
    """As :func:`train_step_fnn`, with the latent chain rebuilt from zero."""
    data = buffer.stacked()
    weights = buffer.objective_weights(cfg.lam)
    r0 = np.zeros(gen.latent_dim)
    return _inner_loop(
        gen, cfg, step_index,
        lambda: engine.dfnn_objective_and_grads(gen, data, cfg.delta, cfg.eps_smooth, weights, r0),
    )
