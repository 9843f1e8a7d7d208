"""MSCKF state machine: propagation, cloning, marginalization, EKF update."""

from __future__ import annotations

import warnings
from functools import lru_cache

import numpy as np
from scipy.stats import chi2

from . import _kernels as kernels
from .lie import (ErrorMode, is_rotation, project_to_so3, retract, skew,
                  so3_exp_batch)
from .states import (CLONE_DOF, GRAVITY, IMU_DOF, CameraClone,
                     CameraExtrinsics, FilterState, ImuSample, ImuState,
                     NoiseParams)

MAX_CLONES = 11

_MAX_STEP = 0.1


@lru_cache(maxsize=512)
def chi2_gate(dof: int, confidence: float = 0.95) -> float:
    return float(chi2.ppf(confidence, dof))


def propagate_mean(imu: ImuState, sample: ImuSample, dt: float,
                   gravity: np.ndarray = GRAVITY) -> ImuState:
    """Integrate the noiseless IMU kinematics over one step (RK4).

    Biases are held constant; the sample's rates are treated as constant
    over the step. dt must be positive and at most 0.1 s.
    """
    if not 0.0 < dt <= _MAX_STEP:
        raise ValueError(f"dt must be in (0, {_MAX_STEP}], got {dt}")
    rot, vel, pos = kernels.rk4_imu_step(
        imu.rot, imu.vel, imu.pos,
        sample.omega - imu.bg, sample.accel - imu.ba, gravity, dt)
    if not is_rotation(rot):
        rot = project_to_so3(rot)
    return ImuState(rot, vel, pos, imu.bg, imu.ba)


def error_matrices(state: FilterState, sample: ImuSample):
    """Continuous error dynamics (F, G) of the IMU block for state.mode.

    The accelerometer reading enters only in STANDARD mode (its linearization
    needs the estimated specific force); the invariant modes depend on the
    rotation/velocity (and, for FULL_INVARIANT, position) estimates alone.
    """
    imu = state.imu
    accel_world = imu.rot @ (sample.accel - imu.ba)
    return kernels.error_matrices(state.mode.value, imu.rot, imu.vel, imu.pos,
                                  state.gravity, accel_world)


def propagate_covariance(state: FilterState, F, G, noise: NoiseParams,
                         dt: float) -> FilterState:
    """Discrete covariance propagation with Phi = I + F dt + F^2 dt^2 / 2.

    The discrete process noise is the trapezoidal average of the endpoint
    integrands, 0.5 dt (G Qc G^T + Phi G Qc G^T Phi^T): exact to O(dt^3)
    and validated against a dense matrix-exponential reference.
    """
    if not 0.0 < dt <= _MAX_STEP:
        raise ValueError(f"dt must be in (0, {_MAX_STEP}], got {dt}")
    Phi = kernels.transition(F, dt)
    N = (G * np.repeat(noise.qc_diag(), 3)) @ G.T
    Qd = 0.5 * dt * (N + Phi @ N @ Phi.T)
    cov = state.cov
    cov[:15, :15] = Phi @ cov[:15, :15] @ Phi.T + Qd
    if cov.shape[0] > 15:
        cross = Phi @ cov[:15, 15:]
        cov[:15, 15:] = cross
        cov[15:, :15] = cross.T
    cov[:, :] = 0.5 * (cov + cov.T)
    return state


def propagate(state: FilterState, sample: ImuSample, dt: float,
              noise: NoiseParams) -> FilterState:
    """Fused mean + covariance propagation step (hot path, kernel-backed)."""
    if not 0.0 < dt <= _MAX_STEP:
        raise ValueError(f"dt must be in (0, {_MAX_STEP}], got {dt}")
    state.cov = np.ascontiguousarray(state.cov)
    imu = state.imu
    rot, vel, pos = kernels.imu_step(
        imu.rot, imu.vel, imu.pos, imu.bg, imu.ba, state.cov,
        sample.omega, sample.accel, state.gravity, noise.qc_diag(), dt,
        state.mode.value)
    if not is_rotation(rot):
        rot = project_to_so3(rot)
    imu.rot, imu.vel, imu.pos = rot, vel, pos
    return state


def clone_jacobian(state: FilterState, extrinsics: CameraExtrinsics) -> np.ndarray:
    """Jacobian of the new clone's 6-dof error w.r.t. the IMU error block.

    Clone errors are left-multiplicative in rotation and additive in
    position in every mode; the position row therefore depends on the
    IMU-error parameterization.
    """
    J = np.zeros((CLONE_DOF, IMU_DOF))
    J[0:3, 0:3] = np.eye(3)
    J[3:6, 6:9] = np.eye(3)
    lever = state.imu.rot @ extrinsics.pos_ic
    if state.mode is ErrorMode.FULL_INVARIANT:
        J[3:6, 0:3] = -skew(state.imu.pos + lever)
    else:
        J[3:6, 0:3] = -skew(lever)
    return J


def augment_clone(state: FilterState, extrinsics: CameraExtrinsics,
                  stamp: float, n_max: int = MAX_CLONES) -> FilterState:
    """Append the current camera pose to the window and grow the covariance."""
    if len(state.clones) >= n_max:
        raise ValueError("clone window full; marginalize before augmenting")
    if state.clones and stamp <= state.clones[-1].stamp:
        raise ValueError("clone stamps must be strictly increasing")
    imu = state.imu
    clone = CameraClone(rot=imu.rot @ extrinsics.rot_ic,
                        pos=imu.pos + imu.rot @ extrinsics.pos_ic,
                        stamp=stamp)
    J = clone_jacobian(state, extrinsics)
    dim = state.error_dim
    cov = np.empty((dim + CLONE_DOF, dim + CLONE_DOF))
    cov[:dim, :dim] = state.cov
    new_rows = J @ state.cov[:IMU_DOF, :]
    cov[dim:, :dim] = new_rows
    cov[:dim, dim:] = new_rows.T
    cov[dim:, dim:] = new_rows[:, :IMU_DOF] @ J.T
    state.clones.append(clone)
    state.cov = 0.5 * (cov + cov.T)
    return state


def marginalize_clones(state: FilterState, indices) -> FilterState:
    """Drop the given clones and their covariance rows/columns."""
    indices = sorted(set(int(i) for i in indices))
    if not indices:
        return state
    if any(i < 0 or i >= len(state.clones) for i in indices):
        raise IndexError("clone index out of range")
    if len(indices) == len(state.clones):
        raise ValueError("cannot marginalize every clone while tracking")
    drop = []
    for i in indices:
        s = state.clone_slice(i)
        drop.extend(range(s.start, s.stop))
    state.cov = np.delete(np.delete(state.cov, drop, axis=0), drop, axis=1)
    state.clones = [c for i, c in enumerate(state.clones) if i not in indices]
    return state


def retract_full(state: FilterState, delta) -> FilterState:
    """Inject a full-dimension correction into the state (in place).

    The IMU block uses the mode's retraction; clones use the fixed window
    convention (left-multiplicative rotation, additive position).
    """
    delta = np.asarray(delta, dtype=float)
    state.imu = retract(state.imu, delta[:IMU_DOF], state.mode)
    n = len(state.clones)
    if n:
        d = delta[IMU_DOF:].reshape(n, CLONE_DOF)
        d_rots = so3_exp_batch(d[:, 0:3])
        for i, clone in enumerate(state.clones):
            clone.rot = d_rots[i] @ clone.rot
            clone.pos = clone.pos + d[i, 3:6]
    return state


def kalman_update(state: FilterState, H, r, R_meas, gate: bool = True):
    """Generic EKF update; returns (state, accepted).

    Gates on the Mahalanobis distance of the residual at 95% unless gate is
    False (used when the caller has already gated per-feature). The
    covariance update is the Joseph form, evaluated through its expansion
    P - K(HP) - (HP)^T K^T + K S K^T (identical algebraically, avoids the
    dense (I-KH) products). A non-invertible innovation covariance skips
    the update with a warning.
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    r = np.atleast_1d(np.asarray(r, dtype=float))
    R_meas = np.atleast_2d(np.asarray(R_meas, dtype=float))
    m = r.size
    if H.shape != (m, state.error_dim) or R_meas.shape != (m, m):
        raise ValueError("inconsistent update dimensions")

    P = state.cov
    HP = H @ P
    S = HP @ H.T + R_meas
    try:
        # one factorization for the gate and the gain: S X = [r | H P]
        X = np.linalg.solve(0.5 * (S + S.T), np.hstack([r[:, None], HP]))
    except np.linalg.LinAlgError:
        warnings.warn("innovation covariance not invertible; update skipped")
        return state, False
    if not np.all(np.isfinite(X)):
        warnings.warn("innovation solve produced non-finite gain; update skipped")
        return state, False

    if gate:
        maha = float(r @ X[:, 0])
        if maha > chi2_gate(m):
            return state, False

    K = X[:, 1:].T  # = P H^T S^-1
    retract_full(state, K @ r)
    KHP = K @ HP
    cov = P - KHP - KHP.T + K @ S @ K.T
    state.cov = 0.5 * (cov + cov.T)
    return state, True
