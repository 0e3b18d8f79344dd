"""Chi-square residue detector: calibration, evaluation, error bounds."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaincinv

__all__ = [
    "chi2_quantile",
    "DetectorConfig",
    "AlarmTrace",
    "empirical_alarm_rate",
    "state_error_bound_from_output_error",
]


def chi2_quantile(prob: float, dof: int) -> float:
    """Quantile of the chi-square distribution with ``dof`` degrees of freedom.

    Inverts the regularized incomplete gamma function; absolute accuracy
    is well below 1e-9 over the usual calibration range.
    """
    if not 0.0 < prob < 1.0:
        raise ValueError(f"probability must lie in (0, 1), got {prob}")
    if dof < 1:
        raise ValueError(f"degrees of freedom must be a positive integer, got {dof}")
    return float(2.0 * gammaincinv(dof / 2.0, prob))


@dataclass(frozen=True)
class DetectorConfig:
    """Threshold ``eta`` calibrated for a target false-alarm probability."""

    epsilon: float
    eta: float
    p_dof: int

    @classmethod
    def calibrate(cls, epsilon: float, p_dof: int) -> "DetectorConfig":
        if not 0.0 < epsilon < 1.0:
            raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
        return cls(epsilon=float(epsilon), eta=chi2_quantile(1.0 - epsilon, p_dof), p_dof=int(p_dof))

    def evaluate(self, g: float) -> bool:
        """Alarm on strict exceedance ``g > eta``."""
        return g > self.eta


@dataclass
class AlarmTrace:
    """Sequence of detection values with their alarm decisions."""

    g_values: np.ndarray
    alarms: np.ndarray
    alarm_rate: float = field(init=False)

    def __post_init__(self):
        self.g_values = np.asarray(self.g_values, dtype=np.float64)
        self.alarms = np.asarray(self.alarms, dtype=bool)
        self.alarm_rate = empirical_alarm_rate(self.alarms)

    @classmethod
    def from_values(cls, det: DetectorConfig, g_values) -> "AlarmTrace":
        g = np.asarray(g_values, dtype=np.float64)
        return cls(g_values=g, alarms=g > det.eta)


def empirical_alarm_rate(alarms) -> float:
    """Fraction of alarmed steps over a nonempty window."""
    alarms = np.asarray(alarms, dtype=bool)
    if alarms.size == 0:
        raise ValueError("empty alarm window")
    return float(np.mean(alarms))


def state_error_bound_from_output_error(alpha: float, sigma: float, k: float, L: float, p_dof: int):
    """Chebyshev-type link from output error to state estimation error.

    For an L-Lipschitz observation map with measurement-noise covariance
    bounded by ``sigma * I``: if the output error reaches ``alpha``, then
    the state error is at least ``(alpha - sqrt(sigma) * k) / L`` with
    probability at least ``1 - p / k^2``.
    """
    if alpha <= 0 or sigma <= 0 or k <= 0 or L <= 0:
        raise ValueError("alpha, sigma, k, L must be positive")
    if not k < alpha / sigma:
        raise ValueError(f"k={k} violates k < alpha/sigma = {alpha / sigma}")
    bound = (alpha - np.sqrt(sigma) * k) / L
    confidence = 1.0 - p_dof / k**2
    return float(bound), float(confidence)
