# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled IMU propagation kernel.

Same contract as the pure-numpy fallback: fused RK4 mean propagation and
second-order covariance propagation, covariance updated in place. Kept in
lockstep with _fallback.imu_step (the equivalence is pinned by tests).
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND_NAME = "compiled"

MODE_STANDARD = 0
MODE_FULL_INVARIANT = 1
MODE_PARTIAL_INVARIANT = 2

cdef enum:
    _STANDARD = 0
    _FULL_INVARIANT = 1
    _PARTIAL_INVARIANT = 2


cdef inline void _skew3(const double* v, double* out) noexcept nogil:
    out[0] = 0.0;    out[1] = -v[2];  out[2] = v[1]
    out[3] = v[2];   out[4] = 0.0;    out[5] = -v[0]
    out[6] = -v[1];  out[7] = v[0];   out[8] = 0.0


cdef inline void _mm3(const double* a, const double* b, double* out) noexcept nogil:
    cdef int i, j, k
    for i in range(3):
        for j in range(3):
            out[3 * i + j] = (a[3 * i] * b[j] + a[3 * i + 1] * b[3 + j]
                              + a[3 * i + 2] * b[6 + j])


cdef inline void _mv3(const double* a, const double* v, double* out) noexcept nogil:
    cdef int i
    for i in range(3):
        out[i] = a[3 * i] * v[0] + a[3 * i + 1] * v[1] + a[3 * i + 2] * v[2]


cdef void _build_fg(int mode, const double* R, const double* v, const double* p,
                    const double* g, const double* aw,
                    double* F, double* G) noexcept nogil:
    """F (15x15) and G (15x12), row-major, zero-initialized by the caller."""
    cdef int i, j
    cdef double vx[9]
    cdef double px[9]
    cdef double gx[9]
    cdef double awx[9]
    cdef double tmp[9]

    # common blocks: F[theta, bg] = -R ; G[theta, n_g] = -R ; bias rows
    for i in range(3):
        for j in range(3):
            F[15 * i + 9 + j] = -R[3 * i + j]
            G[12 * i + j] = -R[3 * i + j]
        G[12 * (9 + i) + 3 + i] = 1.0
        G[12 * (12 + i) + 9 + i] = 1.0

    if mode == _STANDARD:
        _skew3(aw, awx)
        for i in range(3):
            for j in range(3):
                F[15 * (3 + i) + j] = -awx[3 * i + j]
                F[15 * (3 + i) + 12 + j] = -R[3 * i + j]
                G[12 * (3 + i) + 6 + j] = -R[3 * i + j]
            F[15 * (6 + i) + 3 + i] = 1.0
        return

    _skew3(v, vx)
    _skew3(g, gx)
    _mm3(vx, R, tmp)  # skew(v) @ R
    for i in range(3):
        for j in range(3):
            F[15 * (3 + i) + j] = gx[3 * i + j]
            F[15 * (3 + i) + 9 + j] = -tmp[3 * i + j]
            F[15 * (3 + i) + 12 + j] = -R[3 * i + j]
            G[12 * (3 + i) + j] = -tmp[3 * i + j]
            G[12 * (3 + i) + 6 + j] = -R[3 * i + j]
        F[15 * (6 + i) + 3 + i] = 1.0

    if mode == _PARTIAL_INVARIANT:
        for i in range(3):
            for j in range(3):
                F[15 * (6 + i) + j] = -vx[3 * i + j]
    else:
        _skew3(p, px)
        _mm3(px, R, tmp)  # skew(p) @ R
        for i in range(3):
            for j in range(3):
                F[15 * (6 + i) + 9 + j] = -tmp[3 * i + j]
                G[12 * (6 + i) + j] = -tmp[3 * i + j]


def imu_step(rot, vel, pos, bg, ba, cov, omega, accel, gravity, qc,
             double dt, int mode):
    """Fused mean + covariance propagation; cov is updated in place."""
    cdef cnp.ndarray[double, ndim=2, mode="c"] R_in = np.ascontiguousarray(rot, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1, mode="c"] v_in = np.ascontiguousarray(vel, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1, mode="c"] p_in = np.ascontiguousarray(pos, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1, mode="c"] bg_in = np.ascontiguousarray(bg, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1, mode="c"] ba_in = np.ascontiguousarray(ba, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1, mode="c"] g_in = np.ascontiguousarray(gravity, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1, mode="c"] qc_in = np.ascontiguousarray(qc, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1, mode="c"] om_in = np.ascontiguousarray(omega, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1, mode="c"] ac_in = np.ascontiguousarray(accel, dtype=np.float64)
    cdef double[:, ::1] P = cov

    cdef int dim = P.shape[0]
    cdef int i, j, k
    cdef double w[3]
    cdef double a[3]
    for i in range(3):
        w[i] = om_in[i] - bg_in[i]
        a[i] = ac_in[i] - ba_in[i]

    # ---- error dynamics and transition --------------------------------
    cdef double F[225]
    cdef double G[180]
    cdef double Phi[225]
    cdef double F2[225]
    cdef double aw[3]
    for i in range(225):
        F[i] = 0.0
        Phi[i] = 0.0
    for i in range(180):
        G[i] = 0.0
    _mv3(&R_in[0, 0], a, aw)
    _build_fg(mode, &R_in[0, 0], &v_in[0], &p_in[0], &g_in[0], aw, F, G)

    for i in range(15):
        for j in range(15):
            F2[15 * i + j] = 0.0
            for k in range(15):
                F2[15 * i + j] += F[15 * i + k] * F[15 * k + j]
    for i in range(15):
        for j in range(15):
            Phi[15 * i + j] = F[15 * i + j] * dt + 0.5 * F2[15 * i + j] * dt * dt
        Phi[15 * i + i] += 1.0

    # ---- discrete process noise (trapezoid, exact to O(dt^3)) ----------
    #   Qd = 0.5 dt (G Qc G^T + (Phi G) Qc (Phi G)^T)
    cdef double PG[180]
    cdef double Qd[225]
    cdef double qfull[12]
    for i in range(12):
        qfull[i] = qc_in[i // 3]
    for i in range(15):
        for j in range(12):
            PG[12 * i + j] = 0.0
            for k in range(15):
                PG[12 * i + j] += Phi[15 * i + k] * G[12 * k + j]
    for i in range(15):
        for j in range(15):
            Qd[15 * i + j] = 0.0
            for k in range(12):
                Qd[15 * i + j] += (PG[12 * i + k] * PG[12 * j + k]
                                   + G[12 * i + k] * G[12 * j + k]) * qfull[k]
            Qd[15 * i + j] *= 0.5 * dt

    # ---- covariance: top block rows then the IMU block -----------------
    top = np.empty((15, dim))
    cdef double[:, ::1] T = top
    for i in range(15):
        for j in range(dim):
            T[i, j] = 0.0
            for k in range(15):
                T[i, j] += Phi[15 * i + k] * P[k, j]
    cdef double acc
    for i in range(15):
        for j in range(15):
            acc = Qd[15 * i + j]
            for k in range(15):
                acc += T[i, k] * Phi[15 * j + k]
            P[i, j] = acc
    for i in range(15):
        for j in range(i):
            acc = 0.5 * (P[i, j] + P[j, i])
            P[i, j] = acc
            P[j, i] = acc
    for i in range(15):
        for j in range(15, dim):
            P[i, j] = T[i, j]
            P[j, i] = T[i, j]

    # ---- RK4 mean ------------------------------------------------------
    cdef double W[9]
    cdef double R1[9]
    cdef double R2[9]
    cdef double R3[9]
    cdef double R4[9]
    cdef double k1R[9]
    cdef double k2R[9]
    cdef double k3R[9]
    cdef double k4R[9]
    cdef double k1v[3]
    cdef double k2v[3]
    cdef double k3v[3]
    cdef double k4v[3]
    cdef double v2[3]
    cdef double v3[3]
    cdef double v4[3]
    _skew3(w, W)

    rot_out = np.empty((3, 3))
    vel_out = np.empty(3)
    pos_out = np.empty(3)
    cdef double[:, ::1] Ro = rot_out
    cdef double[::1] vo = vel_out
    cdef double[::1] po = pos_out

    for i in range(9):
        R1[i] = R_in[i // 3, i % 3]
    _mm3(R1, W, k1R)
    _mv3(R1, a, k1v)
    for i in range(3):
        k1v[i] += g_in[i]
        v2[i] = v_in[i] + 0.5 * dt * k1v[i]
    for i in range(9):
        R2[i] = R1[i] + 0.5 * dt * k1R[i]
    _mm3(R2, W, k2R)
    _mv3(R2, a, k2v)
    for i in range(3):
        k2v[i] += g_in[i]
        v3[i] = v_in[i] + 0.5 * dt * k2v[i]
    for i in range(9):
        R3[i] = R1[i] + 0.5 * dt * k2R[i]
    _mm3(R3, W, k3R)
    _mv3(R3, a, k3v)
    for i in range(3):
        k3v[i] += g_in[i]
        v4[i] = v_in[i] + dt * k3v[i]
    for i in range(9):
        R4[i] = R1[i] + dt * k3R[i]
    _mm3(R4, W, k4R)
    _mv3(R4, a, k4v)
    for i in range(3):
        k4v[i] += g_in[i]

    for i in range(3):
        for j in range(3):
            Ro[i, j] = R1[3 * i + j] + (dt / 6.0) * (
                k1R[3 * i + j] + 2.0 * k2R[3 * i + j]
                + 2.0 * k3R[3 * i + j] + k4R[3 * i + j])
        vo[i] = v_in[i] + (dt / 6.0) * (k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i])
        po[i] = p_in[i] + (dt / 6.0) * (v_in[i] + 2.0 * v2[i] + 2.0 * v3[i] + v4[i])

    return rot_out, vel_out, pos_out
