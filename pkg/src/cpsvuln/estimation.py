"""Kalman / extended Kalman filtering with residue extraction.

The gain and covariance follow the one-step-ahead recursion

    L_t     = A_t P_t C_t^T (C_t P_t C_t^T + R)^-1
    P_{t+1} = A_t P_t A_t^T + Q - L_t (C_t P_t C_t^T + R) L_t^T

with the state Jacobian evaluated at the previous updated estimate and
the output Jacobian at the prediction.  For LTI plants this reduces to a
standard predictor-form Kalman filter.

``update_differentiable`` rebuilds the measurement update on the active
autodiff tape so a sensor attack can be optimized through it; the gain,
prediction, and innovation covariance of the current step are treated as
constants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import autodiff as ad
from .models import PlantModel, jacobians

__all__ = ["SingularityError", "EstimatorState", "Residue", "ExtendedKalmanFilter"]


class SingularityError(RuntimeError):
    """Innovation covariance is not positive definite."""


@dataclass
class EstimatorState:
    """Snapshot of the filter's runtime condition at step ``t``."""

    x_hat: np.ndarray
    x_pred: np.ndarray
    P: np.ndarray
    L_gain: np.ndarray
    S: np.ndarray
    t: int


@dataclass
class Residue:
    """Innovation ``z``, its covariance ``S`` and detection value ``g``."""

    z: np.ndarray
    S: np.ndarray
    g: float


class ExtendedKalmanFilter:
    """EKF over a :class:`~cpsvuln.models.PlantModel`.

    Call :meth:`predict` with the applied input, then :meth:`update` with
    the (possibly attacked) measurement, once per step.
    """

    def __init__(self, model: PlantModel, x0_hat, P0=None):
        self.model = model
        self.x_hat = np.asarray(x0_hat, dtype=np.float64).copy()
        self.P = np.eye(model.n) if P0 is None else np.asarray(P0, dtype=np.float64).copy()
        self.x_pred = self.x_hat.copy()
        self.L_gain = np.zeros((model.n, model.p))
        self.S = model.R.copy()
        self.S_inv = None  # set by the first predict
        self.hx_pred = model.h(self.x_pred)
        self.C = model.dhdx(self.x_pred)
        self.t = 0
        self._predicted = False

    def state(self) -> EstimatorState:
        return EstimatorState(
            x_hat=self.x_hat.copy(),
            x_pred=self.x_pred.copy(),
            P=self.P.copy(),
            L_gain=self.L_gain.copy(),
            S=self.S.copy(),
            t=self.t,
        )

    def predict(self, u) -> None:
        """Propagate the estimate and refresh gain/covariance for this step."""
        u = np.asarray(u, dtype=np.float64)
        if not np.all(np.isfinite(u)):
            raise ValueError("control input contains non-finite entries")
        model = self.model
        A, C = jacobians(model, self.x_hat, u)
        self.x_pred = model.f(self.x_hat, u)
        self.C = C
        PCt = self.P @ C.T
        S = C @ PCt + model.R
        S = 0.5 * (S + S.T)
        try:
            cho = scipy.linalg.cho_factor(S, lower=True)
        except np.linalg.LinAlgError as exc:
            raise SingularityError(f"innovation covariance not PD at step {self.t}") from exc
        self.S = S
        self.S_inv = scipy.linalg.cho_solve(cho, np.eye(model.p))
        self.L_gain = A @ PCt @ self.S_inv
        P_next = A @ self.P @ A.T + model.Q - self.L_gain @ S @ self.L_gain.T
        self.P = 0.5 * (P_next + P_next.T)
        self.hx_pred = model.h(self.x_pred)
        self._predicted = True

    def update(self, y_c) -> Residue:
        """Measurement update with the received output ``y_c``."""
        y_c = np.asarray(y_c, dtype=np.float64)
        if not np.all(np.isfinite(y_c)):
            raise ValueError("measurement contains non-finite entries")
        if not self._predicted:
            raise RuntimeError("update called before predict")
        z = y_c - self.hx_pred
        self.x_hat = self.x_pred + self.L_gain @ z
        g = float(z @ self.S_inv @ z)
        self.t += 1
        self._predicted = False
        return Residue(z=z, S=self.S.copy(), g=g)

    def update_differentiable(self, y, a):
        """Tape the measurement update for an attacked output ``y + a``.

        Returns the attacked estimate and detection value as tensors; the
        gradient flows only through ``y`` and ``a``.
        """
        if not self._predicted:
            raise RuntimeError("update_differentiable called before predict")
        y_c = ad.add(y, a)
        z = ad.sub(y_c, self.hx_pred)
        g_a = ad.weighted_quadratic(z, self.S_inv)
        x_hat_a = ad.add(self.x_pred, ad.matmul(self.L_gain, z))
        return x_hat_a, g_a
