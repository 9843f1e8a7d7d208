"""Visual-inertial-wheel odometry with selectable error parameterizations.

An MSCKF-style sliding-window filter fusing IMU propagation, feature-track
visual updates, wheel rotation/velocity measurements with non-holonomic
constraints, and planar-motion pseudo-measurements. The error state can be
parameterized as standard additive, full-invariant, or partial-invariant
(rotation-velocity only), plus a simulator and a Monte Carlo consistency
harness comparing the three.
"""

from ._kernels import BACKEND as KERNEL_BACKEND
from .lie import ErrorMode
from .states import (CameraClone, CameraExtrinsics, FilterState, ImuSample,
                     ImuState, NoiseParams, WheelExtrinsics, WheelSample)

__version__ = "0.1.0"

__all__ = [
    "ErrorMode",
    "FilterState",
    "ImuState",
    "ImuSample",
    "CameraClone",
    "CameraExtrinsics",
    "WheelExtrinsics",
    "WheelSample",
    "NoiseParams",
    "KERNEL_BACKEND",
    "__version__",
]
