"""Plain data containers shared by the filter, simulator and evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .lie import ErrorMode

GRAVITY = np.array([0.0, 0.0, -9.81])

IMU_DOF = 15
CLONE_DOF = 6


def _vec3(x) -> np.ndarray:
    return np.array(x, dtype=float).reshape(3)


def _mat3(x) -> np.ndarray:
    return np.array(x, dtype=float).reshape(3, 3)


@dataclass
class ImuState:
    """Navigation state: body-to-global rotation, velocity, position, biases."""

    rot: np.ndarray
    vel: np.ndarray
    pos: np.ndarray
    bg: np.ndarray
    ba: np.ndarray

    def __post_init__(self):
        self.rot = _mat3(self.rot)
        self.vel = _vec3(self.vel)
        self.pos = _vec3(self.pos)
        self.bg = _vec3(self.bg)
        self.ba = _vec3(self.ba)

    @classmethod
    def identity(cls) -> "ImuState":
        return cls(np.eye(3), np.zeros(3), np.zeros(3), np.zeros(3), np.zeros(3))

    def copy(self) -> "ImuState":
        return ImuState(self.rot, self.vel, self.pos, self.bg, self.ba)


@dataclass
class CameraClone:
    """Past camera pose kept in the sliding window."""

    rot: np.ndarray  # camera-to-global
    pos: np.ndarray  # camera position in the global frame
    stamp: float

    def __post_init__(self):
        self.rot = _mat3(self.rot)
        self.pos = _vec3(self.pos)
        self.stamp = float(self.stamp)

    def copy(self) -> "CameraClone":
        return CameraClone(self.rot, self.pos, self.stamp)


@dataclass
class ImuSample:
    """One gyro/accelerometer reading (body frame)."""

    omega: np.ndarray
    accel: np.ndarray
    stamp: float

    def __post_init__(self):
        self.omega = _vec3(self.omega)
        self.accel = _vec3(self.accel)
        self.stamp = float(self.stamp)


@dataclass
class WheelSample:
    """One wheel-odometer reading: yaw rate and forward speed."""

    w: float
    v: float
    stamp: float


@dataclass
class CameraExtrinsics:
    """Camera frame expressed in the IMU frame (rot maps camera -> IMU)."""

    rot_ic: np.ndarray
    pos_ic: np.ndarray

    def __post_init__(self):
        self.rot_ic = _mat3(self.rot_ic)
        self.pos_ic = _vec3(self.pos_ic)


@dataclass
class WheelExtrinsics:
    """Wheel-odometer frame: rot maps IMU -> wheel, pos is the wheel origin in IMU."""

    rot_oi: np.ndarray
    pos_io: np.ndarray

    def __post_init__(self):
        self.rot_oi = _mat3(self.rot_oi)
        self.pos_io = _vec3(self.pos_io)


@dataclass
class NoiseParams:
    """Sensor noise configuration.

    sigma_g / sigma_a / sigma_wg / sigma_wa are continuous-time densities
    (rad/s/sqrt(Hz) etc.); wheel and pixel sigmas are per-sample standard
    deviations.
    """

    sigma_g: float = 0.01
    sigma_a: float = 0.01
    sigma_wg: float = 1.0e-4
    sigma_wa: float = 1.0e-4
    sigma_wheel_v: float = 0.1
    sigma_wheel_w: float = 0.001
    sigma_px: float = 1.0
    sigma_plane: float = 0.1

    def __post_init__(self):
        for name in ("sigma_g", "sigma_a", "sigma_wg", "sigma_wa",
                     "sigma_wheel_v", "sigma_wheel_w", "sigma_px", "sigma_plane"):
            if not (float(getattr(self, name)) > 0.0):
                raise ValueError(f"{name} must be strictly positive")

    def qc_diag(self) -> np.ndarray:
        """Continuous process-noise variances in kernel order (g, wg, a, wa)."""
        return np.array([self.sigma_g**2, self.sigma_wg**2,
                         self.sigma_a**2, self.sigma_wa**2])


@dataclass
class FilterState:
    """Full sliding-window state: IMU state, camera clones and covariance.

    The covariance is ordered (imu 15-dof, clone_1 6-dof, ..., clone_n 6-dof)
    and must stay symmetric positive semidefinite. Single-writer: update
    operations mutate in place and return the state.
    """

    imu: ImuState
    mode: "ErrorMode"
    cov: np.ndarray = None
    clones: list = field(default_factory=list)
    gravity: np.ndarray = field(default_factory=lambda: GRAVITY.copy())

    def __post_init__(self):
        if self.cov is None:
            self.cov = np.zeros((IMU_DOF, IMU_DOF))
        self.cov = np.array(self.cov, dtype=float)
        self.gravity = _vec3(self.gravity)
        if self.cov.shape != (self.error_dim, self.error_dim):
            raise ValueError(
                f"covariance shape {self.cov.shape} does not match "
                f"{len(self.clones)} clones")

    @property
    def error_dim(self) -> int:
        return IMU_DOF + CLONE_DOF * len(self.clones)

    def clone_slice(self, i: int) -> slice:
        return slice(IMU_DOF + CLONE_DOF * i, IMU_DOF + CLONE_DOF * (i + 1))

    def clone_index_at(self, stamp: float, tol: float = 1e-9) -> int:
        for i, c in enumerate(self.clones):
            if abs(c.stamp - stamp) <= tol:
                return i
        raise KeyError(f"no clone at stamp {stamp}")

    def copy(self) -> "FilterState":
        return FilterState(
            imu=self.imu.copy(),
            mode=self.mode,
            cov=self.cov.copy(),
            clones=[c.copy() for c in self.clones],
            gravity=self.gravity.copy(),
        )
