"""Attacker adapters for the closed-loop simulator.

An attacker is a callable ``(t, y, u_prev, ekf, rng) -> a`` invoked once
per step from the attack start onwards, after the filter's prediction
and before its measurement update.  ``ekf.x_hat`` still holds the
previous updated estimate at that point.
"""

from __future__ import annotations

import numpy as np

from .analytic import residue_forcing_attack
from .generators import DfnnGenerator, FnnGenerator, dfnn_generate, fnn_generate
from .training import HistoryBuffer, TrainingConfig, train_step_dfnn, train_step_fnn

__all__ = ["AnalyticLtiAttacker", "FrozenAttacker", "OnlineAttackTrainer", "run_attack"]


class AnalyticLtiAttacker:
    """Residue-forcing attack with noise covariance ``phi_scale * S``."""

    def __init__(self, lti, phi_scale: float = 0.5):
        self.lti = lti
        self.phi_scale = float(phi_scale)
        self.phi_log: list[np.ndarray] = []

    def __call__(self, t, y, u_prev, ekf, rng):
        phi_cov = self.phi_scale * ekf.S
        a = residue_forcing_attack(self.lti, ekf.x_hat, u_prev, y, phi_cov, ekf.S, rng)
        # the drawn phi equals the residue this attack forces
        self.phi_log.append(y + a - self.lti.C @ (self.lti.A @ ekf.x_hat + self.lti.B @ np.asarray(u_prev)))
        return a


class FrozenAttacker:
    """Rollout of a trained generator with fixed parameters."""

    def __init__(self, gen):
        self.gen = gen
        self._started = False

    def __call__(self, t, y, u_prev, ekf, rng):
        if not self._started:
            self._started = True
            if isinstance(self.gen, DfnnGenerator):
                self.gen.reset_latent()
        if isinstance(self.gen, FnnGenerator):
            return fnn_generate(self.gen, y, ekf.x_hat)
        a, _ = dfnn_generate(self.gen, y)
        return a


class OnlineAttackTrainer:
    """Trains the generator inside the loop, then applies its attack.

    Training runs for ``cfg.horizon_T`` attacked steps; afterwards the
    generator is applied frozen.
    """

    def __init__(self, gen, cfg: TrainingConfig, model):
        cfg.validate()
        self.gen = gen
        self.cfg = cfg
        self.buffer = HistoryBuffer(model)
        self.diagnostics = []
        self._trained_steps = 0
        self._started = False

    def __call__(self, t, y, u_prev, ekf, rng):
        if not self._started:
            self._started = True
            if isinstance(self.gen, DfnnGenerator):
                self.gen.reset_latent()
        if self._trained_steps < self.cfg.horizon_T:
            self._record_step(y, ekf)
            if isinstance(self.gen, FnnGenerator):
                diag = train_step_fnn(self.gen, self.buffer, self.cfg, self._trained_steps)
            else:
                diag = train_step_dfnn(self.gen, self.buffer, self.cfg, self._trained_steps)
            self.diagnostics.append(diag)
            self._trained_steps += 1
        if isinstance(self.gen, FnnGenerator):
            return fnn_generate(self.gen, y, ekf.x_hat)
        a, _ = dfnn_generate(self.gen, y)
        return a

    def _record_step(self, y, ekf):
        if isinstance(self.gen, FnnGenerator):
            self.buffer.append(
                y=y, hxp=ekf.hx_pred, xp=ekf.x_pred, L=ekf.L_gain, sinv=ekf.S_inv,
                x_in=self.gen.input_vector(y, ekf.x_hat),
            )
        else:
            yn = self.gen.normalize(np.concatenate([y, np.zeros(self.gen.latent_dim)]))[: self.gen.p]
            self.buffer.append(y=y, hxp=ekf.hx_pred, xp=ekf.x_pred, L=ekf.L_gain, sinv=ekf.S_inv, yn=yn)


def run_attack(generator, sim_loop, duration: int):
    """Closed-loop rollout of a trained generator with frozen parameters."""
    return sim_loop.run(duration, attacker=FrozenAttacker(generator))
