"""Closed-form stealthy attack for unstable LTI plants.

The attack replaces the received output with the filter's own output
prediction plus a chosen noise vector, so the logged residue is exactly
that noise.  With the noise covariance dominated by the innovation
covariance, the detection statistic is stochastically no larger than in
the unattacked system, while an unstable plant drifts without bound.
"""

from __future__ import annotations

import warnings

import numpy as np

from ..models import LtiPlant, noise_factor

__all__ = ["residue_forcing_attack", "check_unstable"]

_PSD_TOL = 1e-9


def check_unstable(A: np.ndarray) -> bool:
    """True when A has an eigenvalue strictly outside the unit circle."""
    return bool(np.max(np.abs(np.linalg.eigvals(A))) > 1.0)


def residue_forcing_attack(lti: LtiPlant, x_hat_prev, u_prev, y, phi_cov, S, rng) -> np.ndarray:
    """One attack vector ``a = -y + C B u_prev + C A x_hat_prev + phi``.

    ``phi ~ N(0, phi_cov)`` with ``phi_cov`` required to be dominated by
    the current innovation covariance ``S``; applying the attack forces
    the residue to equal ``phi`` exactly.
    """
    phi_cov = np.asarray(phi_cov, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64)
    gap = np.linalg.eigvalsh(S - phi_cov)
    if gap.min() < -_PSD_TOL:
        raise ValueError(f"phi covariance is not dominated by S (min eigengap {gap.min():.3e})")
    if not check_unstable(lti.A):
        warnings.warn("plant matrix A is not unstable; the forced drift stays bounded", stacklevel=2)
    phi = noise_factor(phi_cov) @ rng.standard_normal(lti.p)
    y = np.asarray(y, dtype=np.float64)
    return -y + lti.C @ (lti.B @ np.asarray(u_prev, dtype=np.float64)) + lti.C @ (lti.A @ np.asarray(x_hat_prev, dtype=np.float64)) + phi
