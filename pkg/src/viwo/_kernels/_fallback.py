"""Pure-numpy IMU propagation kernels.

Reference implementation of the hot path; used when the compiled extension
is unavailable (and as the ground truth the extension is tested against).
Mean propagation is classic RK4 on the noiseless kinematics with constant
inputs over the step; covariance uses a second-order truncation of the
matrix exponential of the error dynamics.
"""

import numpy as np

MODE_STANDARD = 0
MODE_FULL_INVARIANT = 1
MODE_PARTIAL_INVARIANT = 2

BACKEND_NAME = "python"

_EYE3 = np.eye(3)


def _skew(v):
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rk4_imu_step(rot, vel, pos, omega, accel, gravity, dt):
    """One RK4 step of Rdot = R [w]x, vdot = R a + g, pdot = v.

    omega/accel are bias-corrected body-frame inputs held constant over the
    step. dt may be negative (used by the finite-difference test harness).
    """
    W = _skew(omega)

    k1R, k1v, k1p = rot @ W, rot @ accel + gravity, vel
    R2, v2 = rot + 0.5 * dt * k1R, vel + 0.5 * dt * k1v
    k2R, k2v, k2p = R2 @ W, R2 @ accel + gravity, v2
    R3, v3 = rot + 0.5 * dt * k2R, vel + 0.5 * dt * k2v
    k3R, k3v, k3p = R3 @ W, R3 @ accel + gravity, v3
    R4, v4 = rot + dt * k3R, vel + dt * k3v
    k4R, k4v, k4p = R4 @ W, R4 @ accel + gravity, v4

    rot_out = rot + (dt / 6.0) * (k1R + 2.0 * k2R + 2.0 * k3R + k4R)
    vel_out = vel + (dt / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
    pos_out = pos + (dt / 6.0) * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
    return rot_out, vel_out, pos_out


def error_matrices(mode, rot, vel, pos, gravity, accel_world):
    """Continuous error dynamics (F 15x15, G 15x12) for the given mode.

    Error order (theta, v, p, bg, ba); noise order (n_g, n_wg, n_a, n_wa).
    accel_world = R (a_m - ba) is only read in STANDARD mode. Noise signs
    follow the measured-minus-noise convention so that the finite-difference
    harness reproduces G exactly (the covariance is sign-agnostic).
    """
    F = np.zeros((15, 15))
    G = np.zeros((15, 12))
    F[0:3, 9:12] = -rot
    G[0:3, 0:3] = -rot
    G[9:12, 3:6] = _EYE3
    G[12:15, 9:12] = _EYE3
    if mode == MODE_STANDARD:
        F[3:6, 0:3] = -_skew(accel_world)
        F[3:6, 12:15] = -rot
        F[6:9, 3:6] = _EYE3
        G[3:6, 6:9] = -rot
        return F, G
    vx_rot = _skew(vel) @ rot
    F[3:6, 0:3] = _skew(gravity)
    F[3:6, 9:12] = -vx_rot
    F[3:6, 12:15] = -rot
    F[6:9, 3:6] = _EYE3
    G[3:6, 0:3] = -vx_rot
    G[3:6, 6:9] = -rot
    if mode == MODE_PARTIAL_INVARIANT:
        F[6:9, 0:3] = -_skew(vel)
    else:
        px_rot = _skew(pos) @ rot
        F[6:9, 9:12] = -px_rot
        G[6:9, 0:3] = -px_rot
    return F, G


def transition(F, dt):
    """Second-order truncation of expm(F dt)."""
    Fdt = F * dt
    return np.eye(F.shape[0]) + Fdt + 0.5 * (Fdt @ Fdt)


def imu_step(rot, vel, pos, bg, ba, cov, omega, accel, gravity, qc, dt, mode):
    """Fused mean + covariance propagation; cov is updated in place.

    Returns the propagated (rot, vel, pos); biases are constant over the
    step. cov spans the full (15 + 6n) error state; clone cross-covariance
    is mapped through the IMU-block transition.
    """
    w_eff = omega - bg
    a_eff = accel - ba
    F, G = error_matrices(mode, rot, vel, pos, gravity, rot @ a_eff)
    Phi = transition(F, dt)

    # trapezoidal discrete noise: exact to O(dt^3), keeps PSD
    GQ = G * np.repeat(qc, 3)
    N = GQ @ G.T
    Qd = 0.5 * dt * (N + Phi @ N @ Phi.T)

    cov[:15, :15] = Phi @ cov[:15, :15] @ Phi.T + Qd
    if cov.shape[0] > 15:
        cross = Phi @ cov[:15, 15:]
        cov[:15, 15:] = cross
        cov[15:, :15] = cross.T
    upper = cov[:15, :15]
    cov[:15, :15] = 0.5 * (upper + upper.T)

    return rk4_imu_step(rot, vel, pos, w_eff, a_eff, gravity, dt)
