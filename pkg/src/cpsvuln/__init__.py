"""Closed-loop simulation and stealthy sensor-attack synthesis toolkit.

Plants (LTI, kinematic bicycle, quadrotor) are closed around an extended
Kalman filter, a feedback controller and a chi-square residue detector;
attack sequences against the sensor channel are produced analytically
(unstable LTI plants) or by online-trained neural generators, and runs
are scored by whether the estimation error exceeds a target while the
alarm rate stays at the detector's false-alarm level.
"""

__version__ = "0.1.0"

from . import attack, autodiff, detection, estimation, harness, models

__all__ = ["attack", "autodiff", "detection", "estimation", "harness", "models", "__version__"]
