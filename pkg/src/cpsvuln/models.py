"""Discrete-time plant models: dynamics, observation, noise, Jacobians.

Three built-in plants:

* :class:`LtiPlant` -- generic ``x' = Ax + Bu + w``, ``y = Cx + v``.
* :class:`BicyclePlant` -- 4-state center-of-mass kinematic bicycle
  (position, heading, speed; inputs acceleration and front steering
  angle), Euler-discretized.
* :class:`QuadrotorPlant` -- 12-state Newton-Euler quadrotor (position,
  Euler angles, linear velocity, angular rates; inputs collective thrust
  and three body torques), Euler-discretized.

All built-in observation maps are linear (a selection/output matrix), so
``h_matrix`` is set and the Lipschitz constant of ``h`` is its spectral
norm.  Custom subclasses may override ``dfdx``/``dhdx``; the default
falls back to central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "NumericEscapeError",
    "PlantState",
    "PlantModel",
    "LtiPlant",
    "BicyclePlant",
    "QuadrotorPlant",
    "step",
    "observe",
    "jacobians",
    "noise_factor",
]

_FD_STEP = 1e-6


class NumericEscapeError(RuntimeError):
    """The state left the representable region (non-finite entries)."""


@dataclass
class PlantState:
    """True plant state ``x`` at step index ``t``."""

    x: np.ndarray
    t: int = 0


def noise_factor(cov: np.ndarray) -> np.ndarray:
    """Factor F with F F^T = cov, tolerant of PSD (rank-deficient) inputs."""
    cov = np.asarray(cov, dtype=np.float64)
    if not np.any(cov):
        return np.zeros_like(cov)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(cov)
        w = np.clip(w, 0.0, None)
        return V * np.sqrt(w)


class PlantModel:
    """Base plant: subclasses provide ``f``, ``h`` and (optionally) Jacobians."""

    def __init__(self, n, m, p, Q, R, dt, lipschitz_L=None):
        self.n = int(n)
        self.m = int(m)
        self.p = int(p)
        self.Q = np.asarray(Q, dtype=np.float64).reshape(self.n, self.n)
        self.R = np.asarray(R, dtype=np.float64).reshape(self.p, self.p)
        if dt <= 0:
            raise ValueError("sample time dt must be positive")
        self.dt = float(dt)
        self.lipschitz_L = lipschitz_L
        # y = h_matrix @ x when the observation map is linear, else None
        self.h_matrix: np.ndarray | None = None
        self._wfac = noise_factor(self.Q)
        self._vfac = noise_factor(self.R)

    # -- to implement ------------------------------------------------------
    def f(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def h(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    # -- Jacobians (finite-difference default) -----------------------------
    def dfdx(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return _fd_jacobian(lambda v: self.f(v, u), x, self.n)

    def dhdx(self, x: np.ndarray) -> np.ndarray:
        if self.h_matrix is not None:
            return self.h_matrix
        return _fd_jacobian(self.h, x, self.p)

    # -- noise draws --------------------------------------------------------
    def process_noise(self, rng) -> np.ndarray:
        return self._wfac @ rng.standard_normal(self.n)

    def measurement_noise(self, rng) -> np.ndarray:
        return self._vfac @ rng.standard_normal(self.p)


def _fd_jacobian(fn, x, out_dim):
    x = np.asarray(x, dtype=np.float64)
    J = np.empty((out_dim, x.shape[0]))
    for i in range(x.shape[0]):
        dx = np.zeros_like(x)
        dx[i] = _FD_STEP
        J[:, i] = (np.asarray(fn(x + dx)) - np.asarray(fn(x - dx))) / (2.0 * _FD_STEP)
    return J


def step(model: PlantModel, state: PlantState, u, rng) -> PlantState:
    """Advance one step: ``x' = f(x, u) + w`` with ``w ~ N(0, Q)``."""
    u = np.asarray(u, dtype=np.float64)
    if not np.all(np.isfinite(u)):
        raise ValueError("control input contains non-finite entries")
    with np.errstate(all="ignore"):
        x_next = model.f(state.x, u) + model.process_noise(rng)
    if not np.all(np.isfinite(x_next)):
        raise NumericEscapeError(f"state escaped at step {state.t + 1}")
    return PlantState(x=x_next, t=state.t + 1)


def observe(model: PlantModel, state: PlantState, rng) -> np.ndarray:
    """Sample a measurement ``y = h(x) + v`` with ``v ~ N(0, R)``."""
    return model.h(state.x) + model.measurement_noise(rng)


def jacobians(model: PlantModel, x_lin, u_lin):
    """State Jacobian at (x_lin, u_lin) and output Jacobian at f(x_lin, u_lin)."""
    x_lin = np.asarray(x_lin, dtype=np.float64)
    u_lin = np.asarray(u_lin, dtype=np.float64)
    A = model.dfdx(x_lin, u_lin)
    C = model.dhdx(model.f(x_lin, u_lin))
    return A, C


# ---------------------------------------------------------------------------
# built-in plants
# ---------------------------------------------------------------------------


class LtiPlant(PlantModel):
    """Linear time-invariant plant defined by (A, B, C)."""

    def __init__(self, A, B, C, Q, R, dt=1.0):
        A = np.atleast_2d(np.asarray(A, dtype=np.float64))
        B = np.atleast_2d(np.asarray(B, dtype=np.float64))
        C = np.atleast_2d(np.asarray(C, dtype=np.float64))
        n, m, p = A.shape[0], B.shape[1], C.shape[0]
        if A.shape != (n, n) or B.shape != (n, m) or C.shape != (p, n):
            raise ValueError("inconsistent LTI matrix dimensions")
        super().__init__(n, m, p, Q, R, dt, lipschitz_L=float(np.linalg.norm(C, 2)))
        self.A = A
        self.B = B
        self.C = C
        self.h_matrix = C

    def f(self, x, u):
        return self.A @ x + self.B @ u

    def h(self, x):
        return self.C @ x

    def dfdx(self, x, u):
        return self.A

    def dhdx(self, x):
        return self.C


class BicyclePlant(PlantModel):
    """Kinematic bicycle about the center of mass.

    State ``[x, y, psi, v]``: planar position (m), inertial heading (rad)
    and speed (m/s).  Inputs ``[accel, steer]``: longitudinal acceleration
    (m/s^2) and front steering angle (rad).  The slip angle follows from
    the front/rear axle split::

        beta = atan(lr * tan(steer) / (lf + lr))
        x'   = x + dt * v * cos(psi + beta)
        y'   = y + dt * v * sin(psi + beta)
        psi' = psi + dt * (v / lr) * sin(beta)
        v'   = v + dt * accel

    Measured outputs are the position pair ``(x, y)``.
    """

    def __init__(self, lf=1.25, lr=1.25, dt=0.05, Q=None, R=None):
        Q = 0.001 * np.eye(4) if Q is None else Q
        R = np.diag([0.01, 0.01]) if R is None else R
        super().__init__(4, 2, 2, Q, R, dt, lipschitz_L=1.0)
        self.lf = float(lf)
        self.lr = float(lr)
        self.h_matrix = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])

    def _beta(self, steer):
        return np.arctan(self.lr * np.tan(steer) / (self.lf + self.lr))

    def f(self, x, u):
        px, py, psi, v = x
        accel, steer = u
        beta = self._beta(steer)
        return np.array(
            [
                px + self.dt * v * np.cos(psi + beta),
                py + self.dt * v * np.sin(psi + beta),
                psi + self.dt * (v / self.lr) * np.sin(beta),
                v + self.dt * accel,
            ]
        )

    def h(self, x):
        return self.h_matrix @ x

    def dfdx(self, x, u):
        _, _, psi, v = x
        beta = self._beta(u[1])
        c, s = np.cos(psi + beta), np.sin(psi + beta)
        J = np.eye(4)
        J[0, 2] = -self.dt * v * s
        J[0, 3] = self.dt * c
        J[1, 2] = self.dt * v * c
        J[1, 3] = self.dt * s
        J[2, 3] = self.dt * np.sin(beta) / self.lr
        return J


class QuadrotorPlant(PlantModel):
    """Newton-Euler quadrotor with Euler-angle kinematics.

    State ``[x, y, z, yaw, pitch, roll, vx, vy, vz, yaw_rate, pitch_rate,
    roll_rate]``; inputs ``[thrust, tau_roll, tau_pitch, tau_yaw]``.
    Angular accelerations use the rigid-body gyroscopic terms with the
    small-angle identification of Euler-angle rates and body rates.

    Physical constants (documented defaults, any stable choice works):
    mass 1.0 kg, g 9.81 m/s^2, inertia Jx = Jy = 8.1e-3, Jz = 14.2e-3
    kg m^2.  Measured outputs: position, the three angles, and the three
    angular rates (9 channels).
    """

    MEASURED = (0, 1, 2, 3, 4, 5, 9, 10, 11)

    def __init__(self, dt=0.05, mass=1.0, gravity=9.81, jx=8.1e-3, jy=8.1e-3, jz=14.2e-3, Q=None, R=None):
        Q = 0.001 * np.eye(12) if Q is None else Q
        R = 0.05 * np.eye(9) if R is None else R
        super().__init__(12, 4, 9, Q, R, dt, lipschitz_L=1.0)
        self.mass = float(mass)
        self.gravity = float(gravity)
        self.jx, self.jy, self.jz = float(jx), float(jy), float(jz)
        H = np.zeros((9, 12))
        for row, idx in enumerate(self.MEASURED):
            H[row, idx] = 1.0
        self.h_matrix = H

    def hover_thrust(self) -> float:
        return self.mass * self.gravity

    def f(self, x, u):
        pos, ang, vel, rates = x[0:3], x[3:6], x[6:9], x[9:12]
        thrust, tau_roll, tau_pitch, tau_yaw = u
        yaw, pitch, roll = ang
        cps, sps = np.cos(yaw), np.sin(yaw)
        cth, sth = np.cos(pitch), np.sin(pitch)
        cph, sph = np.cos(roll), np.sin(roll)
        acc = np.array(
            [
                (cph * sth * cps + sph * sps) * thrust / self.mass,
                (cph * sth * sps - sph * cps) * thrust / self.mass,
                -self.gravity + cph * cth * thrust / self.mass,
            ]
        )
        yaw_r, pitch_r, roll_r = rates
        ang_acc = np.array(
            [
                (self.jx - self.jy) / self.jz * pitch_r * roll_r + tau_yaw / self.jz,
                (self.jz - self.jx) / self.jy * yaw_r * roll_r + tau_pitch / self.jy,
                (self.jy - self.jz) / self.jx * pitch_r * yaw_r + tau_roll / self.jx,
            ]
        )
        out = np.empty(12)
        out[0:3] = pos + self.dt * vel
        out[3:6] = ang + self.dt * rates
        out[6:9] = vel + self.dt * acc
        out[9:12] = rates + self.dt * ang_acc
        return out

    def h(self, x):
        return x[list(self.MEASURED)]

    def dfdx(self, x, u):
        yaw, pitch, roll = x[3:6]
        yaw_r, pitch_r, roll_r = x[9:12]
        thrust = u[0]
        cps, sps = np.cos(yaw), np.sin(yaw)
        cth, sth = np.cos(pitch), np.sin(pitch)
        cph, sph = np.cos(roll), np.sin(roll)
        k = thrust / self.mass
        J = np.eye(12)
        J[0:3, 6:9] += self.dt * np.eye(3)
        J[3:6, 9:12] += self.dt * np.eye(3)
        # d(linear accel)/d(yaw, pitch, roll)
        dacc = np.array(
            [
                [(-cph * sth * sps + sph * cps) * k, (cph * cth * cps) * k, (-sph * sth * cps + cph * sps) * k],
                [(cph * sth * cps + sph * sps) * k, (cph * cth * sps) * k, (-sph * sth * sps - cph * cps) * k],
                [0.0, -cph * sth * k, -sph * cth * k],
            ]
        )
        J[6:9, 3:6] += self.dt * dacc
        # d(angular accel)/d(rates), order (yaw_r, pitch_r, roll_r)
        cyaw = (self.jx - self.jy) / self.jz
        cpit = (self.jz - self.jx) / self.jy
        crol = (self.jy - self.jz) / self.jx
        dgyr = np.array(
            [
                [0.0, cyaw * roll_r, cyaw * pitch_r],
                [cpit * roll_r, 0.0, cpit * yaw_r],
                [crol * pitch_r, crol * yaw_r, 0.0],
            ]
        )
        J[9:12, 9:12] += self.dt * dgyr
        return J
