"""SO(3) primitives and the error-state retractions used by the filter."""

from __future__ import annotations

from enum import Enum

import numpy as np

from .states import ImuState

# Below this rotation angle (rad) the closed forms switch to their
# second-order series to avoid catastrophic cancellation.
SMALL_ANGLE = 1e-7

_NEAR_PI = np.pi - 1e-6


class ErrorMode(Enum):
    """Selects how a 15-dof error vector perturbs the nominal IMU state.

    STANDARD: rotation error left-multiplicative in the global frame,
        velocity and position plain additive.
    FULL_INVARIANT: rotation, velocity and position all coupled through the
        group element (left Jacobian on the vector parts).
    PARTIAL_INVARIANT: rotation and velocity coupled, position additive.

    Bias errors are plain additive in every mode. The error vector is
    ordered (theta, v, p, bg, ba).
    """

    STANDARD = 0
    FULL_INVARIANT = 1
    PARTIAL_INVARIANT = 2


def skew(v) -> np.ndarray:
    """Cross-product matrix: skew(v) @ w == cross(v, w)."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(m) -> np.ndarray:
    """Inverse of skew for an antisymmetric matrix."""
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


_EYE3 = np.eye(3)


def so3_exp(phi) -> np.ndarray:
    """Rodrigues formula; second-order series below the small-angle cutoff."""
    phi = np.asarray(phi, dtype=float)
    angle2 = float(phi @ phi)
    K = skew(phi)
    if angle2 < SMALL_ANGLE**2:
        return _EYE3 + K + 0.5 * (K @ K)
    angle = np.sqrt(angle2)
    a = np.sin(angle) / angle
    b = (1.0 - np.cos(angle)) / angle2
    return _EYE3 + a * K + b * (K @ K)


def so3_exp_batch(phis) -> np.ndarray:
    """Rodrigues formula applied to rows of an (n, 3) array."""
    phis = np.asarray(phis, dtype=float)
    n = len(phis)
    K = np.zeros((n, 3, 3))
    K[:, 0, 1], K[:, 0, 2] = -phis[:, 2], phis[:, 1]
    K[:, 1, 0], K[:, 1, 2] = phis[:, 2], -phis[:, 0]
    K[:, 2, 0], K[:, 2, 1] = -phis[:, 1], phis[:, 0]
    K2 = K @ K
    angle2 = (phis**2).sum(axis=1)
    small = angle2 < SMALL_ANGLE**2
    angle = np.sqrt(np.where(small, 1.0, angle2))
    a = np.where(small, 1.0, np.sin(angle) / angle)
    b = np.where(small, 0.5, (1.0 - np.cos(angle)) / np.where(small, 1.0, angle2))
    return _EYE3 + a[:, None, None] * K + b[:, None, None] * K2


def so3_log(rot) -> np.ndarray:
    """Principal rotation vector of a rotation matrix, norm <= pi.

    Near angle pi the antisymmetric part vanishes, so the axis is extracted
    from (R + I)/2: pick the column with the largest diagonal entry and make
    the first non-negligible component positive (deterministic tie-break).
    """
    rot = np.asarray(rot, dtype=float)
    trace = rot[0, 0] + rot[1, 1] + rot[2, 2]
    angle = float(np.arccos(np.clip(0.5 * (trace - 1.0), -1.0, 1.0)))
    if angle < SMALL_ANGLE:
        return 0.5 * vee(rot - rot.T)
    if angle > _NEAR_PI:
        B = 0.5 * (rot + np.eye(3))
        i = int(np.argmax(np.diag(B)))
        axis = B[:, i] / np.sqrt(max(B[i, i], 1e-12))
        axis /= np.linalg.norm(axis)
        for c in axis:
            if abs(c) > 1e-6:
                if c < 0.0:
                    axis = -axis
                break
        return angle * axis
    return angle / (2.0 * np.sin(angle)) * vee(rot - rot.T)


def left_jacobian(phi) -> np.ndarray:
    """Left Jacobian of SO(3); second-order series below the cutoff."""
    phi = np.asarray(phi, dtype=float)
    angle2 = float(phi @ phi)
    K = skew(phi)
    if angle2 < SMALL_ANGLE**2:
        return _EYE3 + 0.5 * K + (K @ K) / 6.0
    angle = np.sqrt(angle2)
    a = (1.0 - np.cos(angle)) / angle2
    b = (angle - np.sin(angle)) / (angle2 * angle)
    return _EYE3 + a * K + b * (K @ K)


def left_jacobian_inv(phi) -> np.ndarray:
    """Closed-form inverse of the left Jacobian (valid for norm < 2*pi)."""
    phi = np.asarray(phi, dtype=float)
    angle2 = float(phi @ phi)
    K = skew(phi)
    if angle2 < SMALL_ANGLE**2:
        return _EYE3 - 0.5 * K + (K @ K) / 12.0
    angle = np.sqrt(angle2)
    half = 0.5 * angle
    # cot form written with half angles to stay finite through angle == pi
    b = (1.0 - half * np.cos(half) / np.sin(half)) / angle2
    return _EYE3 - 0.5 * K + b * (K @ K)


def is_rotation(rot, tol: float = 1e-9) -> bool:
    rot = np.asarray(rot)
    return (np.abs(rot.T @ rot - np.eye(3)).max() < tol
            and abs(np.linalg.det(rot) - 1.0) < tol)


def project_to_so3(rot) -> np.ndarray:
    """Nearest rotation matrix (polar factor via SVD)."""
    u, _, vt = np.linalg.svd(np.asarray(rot, dtype=float))
    out = u @ vt
    if np.linalg.det(out) < 0.0:
        out = u @ np.diag([1.0, 1.0, -1.0]) @ vt
    return out


def rot_to_quat(rot) -> np.ndarray:
    """Rotation matrix to unit quaternion (w, x, y, z); I/O helper."""
    rot = np.asarray(rot, dtype=float)
    trace = rot[0, 0] + rot[1, 1] + rot[2, 2]
    if trace > 0.0:
        s = np.sqrt(trace + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (rot[2, 1] - rot[1, 2]) / s,
                      (rot[0, 2] - rot[2, 0]) / s,
                      (rot[1, 0] - rot[0, 1]) / s])
    else:
        i = int(np.argmax([rot[0, 0], rot[1, 1], rot[2, 2]]))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(max(1.0 + rot[i, i] - rot[j, j] - rot[k, k], 0.0)) * 2.0
        q = np.empty(4)
        q[0] = (rot[k, j] - rot[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (rot[j, i] + rot[i, j]) / s
        q[1 + k] = (rot[k, i] + rot[i, k]) / s
    return q / np.linalg.norm(q)


def quat_to_rot(q) -> np.ndarray:
    """Unit quaternion (w, x, y, z) to rotation matrix; I/O helper."""
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def retract(state: ImuState, xi, mode: ErrorMode) -> ImuState:
    """Apply an error vector (theta, v, p, bg, ba) to a nominal IMU state."""
    xi = np.asarray(xi, dtype=float).reshape(15)
    d_rot = so3_exp(xi[0:3])
    rot = d_rot @ state.rot
    if mode is ErrorMode.STANDARD:
        vel = state.vel + xi[3:6]
        pos = state.pos + xi[6:9]
    else:
        J = left_jacobian(xi[0:3])
        vel = d_rot @ state.vel + J @ xi[3:6]
        if mode is ErrorMode.FULL_INVARIANT:
            pos = d_rot @ state.pos + J @ xi[6:9]
        else:
            pos = state.pos + xi[6:9]
    return ImuState(rot, vel, pos, state.bg + xi[9:12], state.ba + xi[12:15])


def local_coords(nominal: ImuState, other: ImuState, mode: ErrorMode) -> np.ndarray:
    """Inverse retraction: the error vector xi with retract(nominal, xi) == other."""
    theta = so3_log(other.rot @ nominal.rot.T)
    xi = np.empty(15)
    xi[0:3] = theta
    if mode is ErrorMode.STANDARD:
        xi[3:6] = other.vel - nominal.vel
        xi[6:9] = other.pos - nominal.pos
    else:
        d_rot = so3_exp(theta)
        J_inv = left_jacobian_inv(theta)
        xi[3:6] = J_inv @ (other.vel - d_rot @ nominal.vel)
        if mode is ErrorMode.FULL_INVARIANT:
            xi[6:9] = J_inv @ (other.pos - d_rot @ nominal.pos)
        else:
            xi[6:9] = other.pos - nominal.pos
    xi[9:12] = other.bg - nominal.bg
    xi[12:15] = other.ba - nominal.ba
    return xi
