"""Feature triangulation, the windowed visual update and outlier detection."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .filter import chi2_gate, kalman_update
from .states import CameraExtrinsics, FilterState

# Depth limits (m) and reprojection cost gate applied after refinement.
MIN_DEPTH = 0.1
MAX_DEPTH = 150.0
MAX_MEAN_REPROJ = 0.01
MIN_BASELINE = 0.1


@dataclass
class FeatureTrack:
    """Observations of one landmark: (clone stamp, normalized [x/z, y/z])."""

    id: int
    observations: list = field(default_factory=list)

    def add(self, stamp: float, z) -> None:
        self.observations.append((float(stamp), np.asarray(z, dtype=float).reshape(2)))

    def __len__(self) -> int:
        return len(self.observations)


@dataclass
class TriangulatedFeature:
    pos_g: np.ndarray
    condition: float


def projection_jacobian(p_cam) -> np.ndarray:
    """Jacobian of the pinhole normalization [x/z, y/z] w.r.t. the 3D point."""
    x, y, z = p_cam
    return np.array([[1.0 / z, 0.0, -x / z**2],
                     [0.0, 1.0 / z, -y / z**2]])


def _observed_cameras(track: FeatureTrack, clones):
    by_stamp = {c.stamp: c for c in clones}
    out = []
    for stamp, z in track.observations:
        clone = by_stamp.get(stamp)
        if clone is not None:
            out.append((clone.rot, clone.pos, z))
    return out


def triangulate(track: FeatureTrack, clones, max_iters: int = 10,
                strict: bool = True):
    """Estimate the landmark position from a track; None if unusable.

    Linear DLT initialization followed by Gauss-Newton on the reprojection
    error in anchored inverse depth. Rejects degenerate baselines, points
    outside the depth limits and (when strict) fits with large residual
    cost. strict=False serves the outlier detector, which needs a depth for
    poorly-fitting features precisely because they may be moving.
    """
    cams = _observed_cameras(track, clones)
    k = len(cams)
    if k < 2:
        return None
    rots = np.stack([c[0] for c in cams])           # (k, 3, 3)
    centers = np.stack([c[1] for c in cams])        # (k, 3)
    zs = np.stack([c[2] for c in cams])             # (k, 2)
    diffs = centers[:, None, :] - centers[None, :, :]
    baseline = np.sqrt((diffs**2).sum(axis=2)).max()
    if baseline < MIN_BASELINE:
        return None

    # linear solve: the observation ray constraints stacked over all views
    A = np.empty((2 * k, 3))
    ones = np.ones(k)
    A[0::2] = np.einsum("kij,kj->ki", rots, np.stack([ones, 0 * ones, -zs[:, 0]], axis=1))
    A[1::2] = np.einsum("kij,kj->ki", rots, np.stack([0 * ones, ones, -zs[:, 1]], axis=1))
    b = np.empty(2 * k)
    b[0::2] = np.einsum("ki,ki->k", A[0::2], centers)
    b[1::2] = np.einsum("ki,ki->k", A[1::2], centers)
    normal0 = A.T @ A
    try:
        point = np.linalg.solve(normal0, A.T @ b)
    except np.linalg.LinAlgError:
        return None

    rot_a, pos_a = rots[0], centers[0]
    p_anchor = rot_a.T @ (point - pos_a)
    if p_anchor[2] <= MIN_DEPTH:
        return None
    theta = np.array([p_anchor[0] / p_anchor[2], p_anchor[1] / p_anchor[2],
                      1.0 / p_anchor[2]])

    # Gauss-Newton on the reprojection error in anchored inverse depth
    rel_rots = np.einsum("kji,jl->kil", rots, rot_a)       # rot_k^T rot_a
    rel_trans = np.einsum("kji,kj->ki", rots, pos_a - centers)
    J = np.empty((2 * k, 3))
    res = np.empty(2 * k)
    normal = normal0
    for _ in range(max_iters):
        q = rel_rots @ np.array([theta[0], theta[1], 1.0]) + theta[2] * rel_trans
        if np.any(q[:, 2] <= 1e-8):
            return None
        inv_z = 1.0 / q[:, 2]
        pred = q[:, :2] * inv_z[:, None]
        res[0::2] = zs[:, 0] - pred[:, 0]
        res[1::2] = zs[:, 1] - pred[:, 1]
        # rows of -J_pi @ [rel_rots[:, :, :2] | rel_trans]
        d = np.concatenate([rel_rots[:, :, :2], rel_trans[:, :, None]], axis=2)
        J[0::2] = -(d[:, 0, :] - pred[:, 0, None] * d[:, 2, :]) * inv_z[:, None]
        J[1::2] = -(d[:, 1, :] - pred[:, 1, None] * d[:, 2, :]) * inv_z[:, None]
        normal = J.T @ J
        try:
            step = np.linalg.solve(normal + 1e-12 * np.eye(3), -(J.T @ res))
        except np.linalg.LinAlgError:
            return None
        theta = theta + step
        if theta[2] <= 1.0 / MAX_DEPTH:
            return None
        if float(step @ step) < 1e-20:
            break

    point = rot_a @ (np.array([theta[0], theta[1], 1.0]) / theta[2]) + pos_a
    p_cams = np.einsum("kji,kj->ki", rots, point - centers)
    if np.any(p_cams[:, 2] < MIN_DEPTH) or np.any(p_cams[:, 2] > MAX_DEPTH):
        return None
    if strict:
        errs = zs - p_cams[:, :2] / p_cams[:, 2:3]
        if np.sqrt((errs**2).sum(axis=1)).mean() > MAX_MEAN_REPROJ:
            return None
    return TriangulatedFeature(pos_g=point, condition=float(np.linalg.cond(normal)))


def feature_jacobians(state: FilterState, feat: TriangulatedFeature,
                      track: FeatureTrack):
    """Stacked residual and Jacobians (H_x, H_f, r) for one feature.

    Rows for clones that see the point behind the camera are dropped; None
    if fewer than two observations survive.
    """
    rows_hx, rows_hf, rows_r = [], [], []
    dim = state.error_dim
    for stamp, z in track.observations:
        i = state.clone_index_at(stamp)
        clone = state.clones[i]
        p_cam = clone.rot.T @ (feat.pos_g - clone.pos)
        if p_cam[2] < 0.05:
            continue
        Jpi = projection_jacobian(p_cam)
        hx = np.zeros((2, dim))
        sl = state.clone_slice(i)
        hx[:, sl.start:sl.start + 3] = Jpi @ _skew(p_cam) @ clone.rot.T
        hx[:, sl.start + 3:sl.stop] = -Jpi @ clone.rot.T
        rows_hx.append(hx)
        rows_hf.append(Jpi @ clone.rot.T)
        rows_r.append(z - p_cam[:2] / p_cam[2])
    if len(rows_r) < 2:
        return None
    return np.vstack(rows_hx), np.vstack(rows_hf), np.concatenate(rows_r)


def _skew(v):
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def nullspace_project(H_x, H_f, r):
    """Project the visual system onto the left nullspace of H_f.

    The orthonormal basis keeps the isotropic measurement noise isotropic.
    Returns (H, r) with 2k-3 rows, or None when H_f is rank-deficient.
    """
    if H_f.shape[0] < 4:
        return None
    Q, R = np.linalg.qr(H_f, mode="complete")
    diag = np.abs(np.diag(R[:3, :3]))
    if np.any(diag < 1e-10 * max(diag.max(), 1.0)):
        return None
    N = Q[:, 3:]
    return N.T @ H_x, N.T @ r


def visual_update(state: FilterState, finished_tracks, sigma_n: float) -> FilterState:
    """Triangulate, project and stack all usable tracks into one EKF update.

    Each feature is chi-square gated at 95% before stacking; the stacked
    update is not re-gated. sigma_n is the image noise in normalized units.
    An empty survivor set is a no-op.
    """
    blocks_h, blocks_r = [], []
    var = sigma_n**2
    for track in sorted(finished_tracks, key=lambda t: t.id):
        feat = triangulate(track, state.clones)
        if feat is None:
            continue
        sys = feature_jacobians(state, feat, track)
        if sys is None:
            continue
        projected = nullspace_project(*sys)
        if projected is None:
            continue
        H, r = projected
        S = H @ state.cov @ H.T + var * np.eye(H.shape[0])
        try:
            maha = float(r @ np.linalg.solve(S, r))
        except np.linalg.LinAlgError:
            continue
        if maha > chi2_gate(r.size):
            continue
        blocks_h.append(H)
        blocks_r.append(r)
    if not blocks_h:
        return state
    H = np.vstack(blocks_h)
    r = np.concatenate(blocks_r)
    state, _ = kalman_update(state, H, r, var * np.eye(r.size), gate=False)
    return state


def predicted_flow(v_cam, z_norm, depth: float) -> np.ndarray:
    """Normalized-plane velocity of a point under camera-frame motion v_cam.

    Follows d/dt(X/Z) = (v_x - (X/Z) v_z) / Z with z_norm the normalized
    coordinates and depth the point's Z; halving the depth doubles the flow.
    """
    v_cam = np.asarray(v_cam, dtype=float)
    z_norm = np.asarray(z_norm, dtype=float)
    return (v_cam[:2] - v_cam[2] * z_norm) / depth


def detect_outliers(pairs, state: FilterState, extrinsics: CameraExtrinsics,
                    depths, dt: float, omega,
                    min_features: int = 8, omega_max: float = 0.05,
                    min_threshold: float = 1e-9) -> set:
    """Flag dynamic features by comparing measured and predicted image flow.

    pairs maps feature id to (previous, current) normalized coordinates;
    depths holds the current-frame depth per id (features without one are
    skipped). The static-scene prediction uses the estimated camera motion;
    a feature is flagged when its squared flow discrepancy exceeds the
    squared mean discrepancy of the frame (adaptive, scale-free threshold).
    Detection is skipped when the angular rate exceeds omega_max or fewer
    than min_features have usable depth.
    """
    w_hat = np.asarray(omega, dtype=float) - state.imu.bg
    if np.linalg.norm(w_hat) > omega_max:
        return set()
    imu = state.imu
    rot_c = imu.rot @ extrinsics.rot_ic
    vel_c = imu.vel + imu.rot @ np.cross(w_hat, extrinsics.pos_ic)
    v_cam = -rot_c.T @ vel_c  # apparent feature velocity under the static hypothesis

    ids, errors = [], []
    for fid, (z_prev, z_curr) in pairs.items():
        depth = depths.get(fid)
        if depth is None or depth < MIN_DEPTH:
            continue
        v_pred = predicted_flow(v_cam, z_prev, depth)
        v_meas = (np.asarray(z_curr, dtype=float) - z_prev) / dt
        ids.append(fid)
        errors.append(float(np.linalg.norm(v_meas - v_pred)))
    if len(ids) < min_features:
        return set()
    errors = np.array(errors)
    # min_threshold only guards numerically-zero populations
    threshold = max(float(np.mean(errors)), min_threshold)
    return {fid for fid, err in zip(ids, errors) if err > threshold}
