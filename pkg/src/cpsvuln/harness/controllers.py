"""Feedback controllers acting on the state estimate.

Gains are fixed, documented constants tuned so the unattacked loops hold
their references comfortably: the vehicle stays within +-0.5 m of the
lane center and the quadrotor within +-0.5 m of its altitude reference
after the initial transient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["LtiRegulator", "StraightRoad", "CurvyRoad", "VehicleLaneKeeping", "QuadrotorController"]


@dataclass
class LtiRegulator:
    """Static state feedback ``u = -K x_hat``."""

    K: np.ndarray

    def u(self, x_hat, t_sec):
        return -np.atleast_2d(self.K) @ x_hat


class StraightRoad:
    """Lane center along the X axis."""

    def y_ref(self, x):
        return 0.0

    def psi_ref(self, x):
        return 0.0


class CurvyRoad:
    """Sinusoidal lane center ``y = amp * sin(2 pi x / period)``."""

    def __init__(self, amp=3.0, period=200.0):
        self.amp = float(amp)
        self.period = float(period)

    def y_ref(self, x):
        return self.amp * np.sin(2.0 * np.pi * x / self.period)

    def psi_ref(self, x):
        slope = self.amp * 2.0 * np.pi / self.period * np.cos(2.0 * np.pi * x / self.period)
        return np.arctan(slope)


class VehicleLaneKeeping:
    """Heading plus lateral-error steering with speed regulation.

    Steering ``delta = -k_y (y - y_ref) - k_psi (psi - psi_ref)`` saturated
    at +-0.5 rad; acceleration ``k_v (v_ref - v)``.
    """

    K_Y = 1.6
    K_PSI = 4.0
    K_V = 1.0
    STEER_MAX = 0.5

    def __init__(self, v_ref=10.0, road=None):
        self.v_ref = float(v_ref)
        self.road = road if road is not None else StraightRoad()

    def u(self, x_hat, t_sec):
        px, py, psi, v = x_hat
        steer = -self.K_Y * (py - self.road.y_ref(px)) - self.K_PSI * (psi - self.road.psi_ref(px))
        steer = float(np.clip(steer, -self.STEER_MAX, self.STEER_MAX))
        accel = self.K_V * (self.v_ref - v)
        return np.array([accel, steer])


class QuadrotorController:
    """Cascaded position/attitude feedback for hover and altitude ramps.

    The altitude loop sets collective thrust around hover; the horizontal
    loops command small pitch/roll angles; an inner PD loop tracks them.
    """

    KP_Z = 14.0
    KD_Z = 4.0
    Z_ERR_MAX = 2.0
    KP_XY = 0.4
    KD_XY = 0.8
    KP_ATT = 10.0
    KD_ATT = 5.0
    KP_YAW = 4.0
    KD_YAW = 3.0
    ANGLE_MAX = 0.3

    def __init__(self, model, z_ref=20.0, ramp_rate=None):
        self.model = model
        self.z_ref = float(z_ref)
        self.ramp_rate = ramp_rate  # None: constant setpoint; else z_ref(t) = rate * t

    def _z_reference(self, t_sec):
        if self.ramp_rate is None:
            return self.z_ref, 0.0
        return self.ramp_rate * t_sec, self.ramp_rate

    def u(self, x_hat, t_sec):
        m = self.model
        px, py, pz = x_hat[0:3]
        yaw, pitch, roll = x_hat[3:6]
        vx, vy, vz = x_hat[6:9]
        yaw_r, pitch_r, roll_r = x_hat[9:12]

        z_ref, z_ref_rate = self._z_reference(t_sec)
        z_err = float(np.clip(z_ref - pz, -self.Z_ERR_MAX, self.Z_ERR_MAX))
        thrust = m.mass * (m.gravity + self.KP_Z * z_err + self.KD_Z * (z_ref_rate - vz))
        thrust = float(np.clip(thrust, 0.0, 3.0 * m.mass * m.gravity))

        ax_des = self.KP_XY * (0.0 - px) - self.KD_XY * vx
        ay_des = self.KP_XY * (0.0 - py) - self.KD_XY * vy
        # small-angle inversion of the thrust direction at near-zero yaw
        pitch_des = float(np.clip(ax_des / m.gravity, -self.ANGLE_MAX, self.ANGLE_MAX))
        roll_des = float(np.clip(-ay_des / m.gravity, -self.ANGLE_MAX, self.ANGLE_MAX))

        tau_roll = m.jx * (self.KP_ATT * (roll_des - roll) - self.KD_ATT * roll_r)
        tau_pitch = m.jy * (self.KP_ATT * (pitch_des - pitch) - self.KD_ATT * pitch_r)
        tau_yaw = m.jz * (self.KP_YAW * (0.0 - yaw) - self.KD_YAW * yaw_r)
        return np.array([thrust, tau_roll, tau_pitch, tau_yaw])
