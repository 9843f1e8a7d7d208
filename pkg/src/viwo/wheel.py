"""Wheel-odometer yaw preintegration, rotation/velocity updates and plane constraints."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .filter import kalman_update
from .lie import ErrorMode, skew, so3_log
from .states import CameraExtrinsics, FilterState, WheelExtrinsics, WheelSample

SIGMA_NH = 0.05  # non-holonomic pseudo-noise (m/s) on lateral/vertical speed

_E3 = np.array([0.0, 0.0, 1.0])


@dataclass
class YawPreintegration:
    """Integrated wheel yaw rate over one clone interval."""

    angle: float
    t_start: float
    t_end: float
    variance: float


def preintegrate_yaw(samples, t_start: float, t_end: float,
                     sigma_w: float) -> YawPreintegration | None:
    """Trapezoidal integral of the yaw rate over [t_start, t_end].

    Boundary values are interpolated linearly from the surrounding samples.
    Returns None when a coverage gap larger than ~1.5 nominal sample periods
    is found (the caller skips the rotation update). The variance accumulates
    the per-sample white noise through the trapezoid weights.
    """
    if t_end <= t_start:
        return None
    times = np.array([s.stamp for s in samples])
    rates = np.array([s.w for s in samples])
    if times.size < 2 or times[0] > t_start or times[-1] < t_end:
        return None
    period = float(np.median(np.diff(times)))
    inside = (times > t_start) & (times < t_end)
    knots_t = np.concatenate(([t_start], times[inside], [t_end]))
    knots_w = np.concatenate(([np.interp(t_start, times, rates)],
                              rates[inside],
                              [np.interp(t_end, times, rates)]))
    gaps = np.diff(knots_t)
    if gaps.size and gaps.max() > 1.5 * period:
        return None
    angle = float(np.trapezoid(knots_w, knots_t))
    weights = np.zeros_like(knots_t)
    weights[:-1] += 0.5 * gaps
    weights[1:] += 0.5 * gaps
    variance = float(sigma_w**2 * np.sum(weights**2))
    return YawPreintegration(angle=angle, t_start=t_start, t_end=t_end,
                             variance=variance)


def _rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def predicted_relative_yaw_rotation(state: FilterState, clone_index: int,
                                    wheel_extr: WheelExtrinsics,
                                    cam_extr: CameraExtrinsics) -> np.ndarray:
    """Wheel-frame rotation from the clone's epoch to the current state."""
    rot_ik = state.clones[clone_index].rot @ cam_extr.rot_ic.T
    return wheel_extr.rot_oi @ rot_ik.T @ state.imu.rot @ wheel_extr.rot_oi.T


def rotation_jacobian(state: FilterState, clone_index: int,
                      wheel_extr: WheelExtrinsics) -> np.ndarray:
    """Row Jacobian of the relative-yaw residual.

    Both rotation blocks carry the current wheel-frame attitude; the block
    placement (current state vs. clone) is fixed by the finite-difference
    suite.
    """
    block = (wheel_extr.rot_oi @ state.imu.rot.T)[2]
    H = np.zeros((1, state.error_dim))
    H[0, 0:3] = block
    sl = state.clone_slice(clone_index)
    H[0, sl.start:sl.start + 3] = -block
    return H


def rotation_update(state: FilterState, preint: YawPreintegration,
                    clone_stamp: float, wheel_extr: WheelExtrinsics,
                    cam_extr: CameraExtrinsics):
    """Relative-yaw update between a clone and the current state.

    The scalar residual is the yaw component of the rotation discrepancy
    between the preintegrated wheel measurement and the prediction.
    """
    i = state.clone_index_at(clone_stamp)
    rel_pred = predicted_relative_yaw_rotation(state, i, wheel_extr, cam_extr)
    residual = so3_log(rel_pred.T @ _rot_z(preint.angle))[2]
    H = rotation_jacobian(state, i, wheel_extr)
    return kalman_update(state, H, np.array([residual]),
                         np.array([[preint.variance]]))


def predicted_wheel_velocity(state: FilterState, wheel_extr: WheelExtrinsics,
                             omega_raw) -> np.ndarray:
    """Wheel-frame velocity of the odometer origin under the current estimate.

    omega_raw is the raw gyro reading; the current bias estimate is
    subtracted internally.
    """
    imu = state.imu
    w_hat = np.asarray(omega_raw, dtype=float) - imu.bg
    lever = np.cross(w_hat, wheel_extr.pos_io)
    return wheel_extr.rot_oi @ (lever + imu.rot.T @ imu.vel)


def velocity_jacobian(state: FilterState, wheel_extr: WheelExtrinsics) -> np.ndarray:
    """3-row Jacobian of the predicted wheel-frame velocity.

    In the invariant modes the rotation-error block is identically zero;
    only the standard additive parameterization couples attitude error into
    the velocity measurement.
    """
    rot_og = wheel_extr.rot_oi @ state.imu.rot.T
    H = np.zeros((3, state.error_dim))
    H[:, 3:6] = rot_og
    H[:, 9:12] = wheel_extr.rot_oi @ skew(wheel_extr.pos_io)
    if state.mode is ErrorMode.STANDARD:
        H[:, 0:3] = rot_og @ skew(state.imu.vel)
    return H


def velocity_update(state: FilterState, sample: WheelSample, omega_raw,
                    wheel_extr: WheelExtrinsics, sigma_v: float,
                    sigma_nh: float = SIGMA_NH):
    """Forward-speed update with non-holonomic lateral/vertical constraints.

    The 3-row residual pins the wheel-frame velocity to (measured forward
    speed, 0, 0) with measurement noise diag(sigma_v^2, sigma_nh^2,
    sigma_nh^2).
    """
    pred = predicted_wheel_velocity(state, wheel_extr, omega_raw)
    residual = np.array([sample.v, 0.0, 0.0]) - pred
    H = velocity_jacobian(state, wheel_extr)
    R_meas = np.diag([sigma_v**2, sigma_nh**2, sigma_nh**2])
    return kalman_update(state, H, residual, R_meas)


def predicted_plane_tilt(state: FilterState, plane_rot,
                         wheel_extr: WheelExtrinsics) -> np.ndarray:
    """In-plane components of the wheel z-axis (zero when parallel to the plane)."""
    axis = state.imu.rot @ wheel_extr.rot_oi.T @ _E3
    return (np.asarray(plane_rot) @ axis)[:2]


def predicted_plane_height(state: FilterState, plane_rot,
                           wheel_extr: WheelExtrinsics) -> float:
    """Height of the wheel-frame origin above the plane."""
    pos_o = state.imu.pos + state.imu.rot @ wheel_extr.pos_io
    return float(np.asarray(plane_rot)[2] @ pos_o)


def plane_tilt_jacobian(state: FilterState, plane_rot,
                        wheel_extr: WheelExtrinsics) -> np.ndarray:
    plane_rot = np.asarray(plane_rot)
    axis = state.imu.rot @ wheel_extr.rot_oi.T @ _E3
    H = np.zeros((2, state.error_dim))
    H[:, 0:3] = -(plane_rot @ skew(axis))[:2]
    return H


def plane_height_jacobian(state: FilterState, plane_rot,
                          wheel_extr: WheelExtrinsics) -> np.ndarray:
    plane_rot = np.asarray(plane_rot)
    lever = state.imu.rot @ wheel_extr.pos_io
    H = np.zeros((1, state.error_dim))
    if state.mode is ErrorMode.FULL_INVARIANT:
        H[0, 0:3] = -plane_rot[2] @ skew(state.imu.pos + lever)
    else:
        H[0, 0:3] = -plane_rot[2] @ skew(lever)
    H[0, 6:9] = plane_rot[2]
    return H


def plane_update(state: FilterState, plane_rot, wheel_extr: WheelExtrinsics,
                 sigma_plane: float):
    """Pseudo-measurements pinning the wheel frame to the initialization plane.

    Two gated updates: a 2-dof rotational residual and a scalar height
    residual, both with covariance sigma_plane^2 I. Returns
    (state, rot_accepted, tran_accepted).
    """
    var = sigma_plane**2
    z_rot = predicted_plane_tilt(state, plane_rot, wheel_extr)
    H_rot = plane_tilt_jacobian(state, plane_rot, wheel_extr)
    state, rot_ok = kalman_update(state, H_rot, -z_rot, var * np.eye(2))

    z_tran = predicted_plane_height(state, plane_rot, wheel_extr)
    H_tran = plane_height_jacobian(state, plane_rot, wheel_extr)
    state, tran_ok = kalman_update(state, H_tran, np.array([-z_tran]),
                                   np.array([[var]]))
    return state, rot_ok, tran_ok
