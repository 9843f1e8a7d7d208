"""Numeric verification of every analytic Jacobian against central differences.

All comparisons differentiate the measurement/prediction functions through
the active error parameterization (retraction), so a passing suite pins the
Jacobian conventions to the retractions actually used by the filter. The
error-dynamics check uses a +/- dt central difference in time, which cancels
the second-order terms of the discrete transition and recovers the
continuous-time matrices directly.
"""

from __future__ import annotations

import numpy as np

from . import filter as filt
from . import visual, wheel
from .lie import ErrorMode, local_coords, retract, skew, so3_exp, so3_log
from .states import (CameraClone, CameraExtrinsics, FilterState, ImuSample,
                     ImuState, WheelExtrinsics)

FG_TOL = 1e-4
MEAS_TOL = 1e-5


def rel_err(analytic, fd) -> float:
    scale = max(np.abs(analytic).max(), np.abs(fd).max(), 1e-9)
    return float(np.abs(analytic - fd).max() / scale)


def _flow(imu: ImuState, omega_m, accel_m, noise, gravity, dt):
    """RK4 flow of the true kinematics under a constant 12-dim noise vector.

    Rate noise is subtracted from the measured rates; bias-drift noise makes
    the biases ramp linearly across the step (stage inputs are re-evaluated
    at the stage times). dt may be negative.
    """
    n_g, n_wg = noise[0:3], noise[3:6]
    n_a, n_wa = noise[6:9], noise[9:12]

    def deriv(t, rot, vel):
        w = omega_m - (imu.bg + n_wg * t) - n_g
        a = accel_m - (imu.ba + n_wa * t) - n_a
        return rot @ skew(w), rot @ a + gravity, vel

    rot, vel, pos = imu.rot, imu.vel, imu.pos
    k1R, k1v, k1p = deriv(0.0, rot, vel)
    k2R, k2v, k2p = deriv(0.5 * dt, rot + 0.5 * dt * k1R, vel + 0.5 * dt * k1v)
    k3R, k3v, k3p = deriv(0.5 * dt, rot + 0.5 * dt * k2R, vel + 0.5 * dt * k2v)
    k4R, k4v, k4p = deriv(dt, rot + dt * k3R, vel + dt * k3v)
    return ImuState(
        rot + (dt / 6.0) * (k1R + 2 * k2R + 2 * k3R + k4R),
        vel + (dt / 6.0) * (k1v + 2 * k2v + 2 * k3v + k4v),
        pos + (dt / 6.0) * (k1p + 2 * k2p + 2 * k3p + k4p),
        imu.bg + n_wg * dt,
        imu.ba + n_wa * dt,
    )


def fd_error_dynamics(state: FilterState, sample: ImuSample,
                      dt: float = 1e-3, eps: float = 1e-5):
    """Finite-difference (F, G) of the continuous error dynamics."""
    imu, mode, g = state.imu, state.mode, state.gravity
    zero_n = np.zeros(12)
    est = {h: _flow(imu, sample.omega, sample.accel, zero_n, g, h)
           for h in (dt, -dt)}

    def err_after(xi, noise, h):
        truth = _flow(retract(imu, xi, mode), sample.omega, sample.accel,
                      noise, g, h)
        return local_coords(est[h], truth, mode)

    zero_xi = np.zeros(15)
    F_fd = np.empty((15, 15))
    for i in range(15):
        e = np.zeros(15)
        e[i] = eps
        col = {}
        for h in (dt, -dt):
            col[h] = (err_after(e, zero_n, h) - err_after(-e, zero_n, h)) / (2 * eps)
        F_fd[:, i] = (col[dt] - col[-dt]) / (2 * dt)
    G_fd = np.empty((15, 12))
    for j in range(12):
        n = np.zeros(12)
        n[j] = eps
        col = {}
        for h in (dt, -dt):
            col[h] = (err_after(zero_xi, n, h) - err_after(zero_xi, -n, h)) / (2 * eps)
        G_fd[:, j] = (col[dt] - col[-dt]) / (2 * dt)
    return F_fd, G_fd


def fd_jacobian(func, state: FilterState, eps: float = 1e-6) -> np.ndarray:
    """Central differences of func(state) through the full-state retraction."""
    dim = state.error_dim
    cols = []
    for i in range(dim):
        delta = np.zeros(dim)
        delta[i] = eps
        fp = np.atleast_1d(func(filt.retract_full(state.copy(), delta)))
        fm = np.atleast_1d(func(filt.retract_full(state.copy(), -delta)))
        cols.append((fp - fm) / (2 * eps))
    return np.stack(cols, axis=1)


def fd_clone_jacobian(state: FilterState, extr: CameraExtrinsics,
                      eps: float = 1e-6) -> np.ndarray:
    """FD of the clone-creation map (new clone error w.r.t. IMU error)."""
    def clone_of(st):
        return st.imu.rot @ extr.rot_ic, st.imu.pos + st.imu.rot @ extr.pos_ic

    dim = state.error_dim
    cols = []
    for i in range(15):
        delta = np.zeros(dim)
        delta[i] = eps
        Rp, pp = clone_of(filt.retract_full(state.copy(), delta))
        Rm, pm = clone_of(filt.retract_full(state.copy(), -delta))
        dtheta = (so3_log(Rp @ Rm.T)) / (2 * eps)
        dpos = (pp - pm) / (2 * eps)
        cols.append(np.concatenate([dtheta, dpos]))
    return np.stack(cols, axis=1)


def fd_feature_jacobian(state: FilterState, track, pos_g,
                        eps: float = 1e-6) -> np.ndarray:
    """FD of the stacked projections w.r.t. the landmark position."""
    def h(p):
        out = []
        for stamp, _ in track.observations:
            clone = state.clones[state.clone_index_at(stamp)]
            pc = clone.rot.T @ (p - clone.pos)
            out.append(pc[:2] / pc[2])
        return np.concatenate(out)

    cols = []
    for i in range(3):
        d = np.zeros(3)
        d[i] = eps
        cols.append((h(pos_g + d) - h(pos_g - d)) / (2 * eps))
    return np.stack(cols, axis=1)


def random_rotation(rng, scale: float = 1.5) -> np.ndarray:
    return so3_exp(rng.normal(size=3) * scale / np.sqrt(3.0))


def random_filter_state(rng, mode: ErrorMode, n_clones: int = 3) -> FilterState:
    imu = ImuState(
        rot=random_rotation(rng),
        vel=rng.normal(size=3) * 3.0,
        pos=rng.normal(size=3) * 10.0,
        bg=rng.normal(size=3) * 0.02,
        ba=rng.normal(size=3) * 0.05,
    )
    clones = [CameraClone(rot=random_rotation(rng),
                          pos=rng.normal(size=3) * 10.0,
                          stamp=0.1 * (i + 1))
              for i in range(n_clones)]
    dim = 15 + 6 * n_clones
    return FilterState(imu=imu, mode=mode, cov=np.zeros((dim, dim)),
                       clones=clones)


def random_camera_extrinsics(rng) -> CameraExtrinsics:
    return CameraExtrinsics(rot_ic=random_rotation(rng, 0.6),
                            pos_ic=rng.normal(size=3) * 0.2)


def random_wheel_extrinsics(rng) -> WheelExtrinsics:
    return WheelExtrinsics(rot_oi=random_rotation(rng, 0.4),
                           pos_io=rng.normal(size=3) * 0.5)


def _visible_track(rng, state: FilterState):
    """A feature in front of every clone plus its exact observations."""
    anchor = state.clones[0]
    depth = 4.0 + 4.0 * rng.random()
    pos_g = anchor.pos + anchor.rot @ np.array([0.3 * rng.normal(),
                                                0.3 * rng.normal(), depth])
    track = visual.FeatureTrack(id=0)
    for clone in state.clones:
        pc = clone.rot.T @ (pos_g - clone.pos)
        if pc[2] < 0.2:
            return None
        track.add(clone.stamp, pc[:2] / pc[2])
    return pos_g, track


def _looking_clones(rng, mode: ErrorMode, n_clones: int = 4) -> FilterState:
    """Filter state whose clones share a rough viewing direction."""
    state = random_filter_state(rng, mode, n_clones=n_clones)
    base_rot = random_rotation(rng)
    base_pos = rng.normal(size=3) * 5.0
    for i, clone in enumerate(state.clones):
        clone.rot = so3_exp(rng.normal(size=3) * 0.1) @ base_rot
        clone.pos = base_pos + rng.normal(size=3) * 0.5
    return state


def _case_error_dynamics(rng, mode):
    state = random_filter_state(rng, mode, n_clones=0)
    sample = ImuSample(omega=rng.normal(size=3) * 0.5,
                       accel=rng.normal(size=3) * 3.0, stamp=0.0)
    F, G = filt.error_matrices(state, sample)
    F_fd, G_fd = fd_error_dynamics(state, sample)
    return max(rel_err(F, F_fd), rel_err(G, G_fd))


def _case_clone_jacobian(rng, mode):
    state = random_filter_state(rng, mode)
    extr = random_camera_extrinsics(rng)
    J = filt.clone_jacobian(state, extr)
    return rel_err(J, fd_clone_jacobian(state, extr))


def _case_visual(rng, mode):
    state = _looking_clones(rng, mode)
    made = None
    while made is None:
        made = _visible_track(rng, state)
    pos_g, track = made
    feat = visual.TriangulatedFeature(pos_g=pos_g, condition=1.0)
    H_x, H_f, _ = visual.feature_jacobians(state, feat, track)

    def h(st):
        out = []
        for stamp, _ in track.observations:
            clone = st.clones[st.clone_index_at(stamp)]
            pc = clone.rot.T @ (pos_g - clone.pos)
            out.append(pc[:2] / pc[2])
        return np.concatenate(out)

    err_x = rel_err(H_x, fd_jacobian(h, state))
    err_f = rel_err(H_f, fd_feature_jacobian(state, track, pos_g))
    return max(err_x, err_f)


def _case_wheel_rotation(rng, mode):
    state = random_filter_state(rng, mode)
    wheel_extr = random_wheel_extrinsics(rng)
    cam_extr = random_camera_extrinsics(rng)
    # clones store camera poses; make clone 0 consistent with some IMU pose
    idx = 0
    H = wheel.rotation_jacobian(state, idx, wheel_extr)
    base = wheel.predicted_relative_yaw_rotation(state, idx, wheel_extr, cam_extr)

    def h(st):
        rel = wheel.predicted_relative_yaw_rotation(st, idx, wheel_extr, cam_extr)
        return so3_log(base.T @ rel)[2]

    return rel_err(H, fd_jacobian(h, state))


def _case_wheel_velocity(rng, mode):
    state = random_filter_state(rng, mode)
    wheel_extr = random_wheel_extrinsics(rng)
    omega_raw = rng.normal(size=3) * 0.5
    H = wheel.velocity_jacobian(state, wheel_extr)

    def h(st):
        return wheel.predicted_wheel_velocity(st, wheel_extr, omega_raw)

    return rel_err(H, fd_jacobian(h, state))


def _case_plane(rng, mode):
    state = random_filter_state(rng, mode)
    wheel_extr = random_wheel_extrinsics(rng)
    plane_rot = random_rotation(rng, 0.2)
    H_rot = wheel.plane_tilt_jacobian(state, plane_rot, wheel_extr)
    H_tran = wheel.plane_height_jacobian(state, plane_rot, wheel_extr)
    err_rot = rel_err(H_rot, fd_jacobian(
        lambda st: wheel.predicted_plane_tilt(st, plane_rot, wheel_extr), state))
    err_tran = rel_err(H_tran, fd_jacobian(
        lambda st: wheel.predicted_plane_height(st, plane_rot, wheel_extr), state))
    return max(err_rot, err_tran)


_CASES = [
    ("error dynamics F/G", _case_error_dynamics, FG_TOL),
    ("clone augmentation J", _case_clone_jacobian, MEAS_TOL),
    ("visual H_x / H_f", _case_visual, MEAS_TOL),
    ("wheel rotation H", _case_wheel_rotation, MEAS_TOL),
    ("wheel velocity H", _case_wheel_velocity, MEAS_TOL),
    ("plane H_rot / H_tran", _case_plane, MEAS_TOL),
]


def jacobian_report(seed: int = 0, n_trials: int = 50):
    """Max relative FD error for every analytic Jacobian, per error mode.

    Returns a list of dicts (name, mode, max_err, tol, ok).
    """
    rows = []
    for name, case, tol in _CASES:
        for mode in ErrorMode:
            rng = np.random.default_rng(seed)
            worst = 0.0
            for _ in range(n_trials):
                worst = max(worst, case(rng, mode))
            rows.append({"name": name, "mode": mode.name.lower(),
                         "max_err": worst, "tol": tol, "ok": worst <= tol})
    return rows
