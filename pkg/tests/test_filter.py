import numpy as np
import pytest
from scipy.linalg import expm

from viwo import filter as filt
from viwo.check import fd_clone_jacobian, fd_error_dynamics
from viwo.lie import ErrorMode, so3_exp, so3_log
from viwo.states import (GRAVITY, CameraExtrinsics, FilterState, ImuSample,
                         ImuState, NoiseParams)

from conftest import MODES, make_filter_state, make_imu_state, random_rotation


def _sample(omega, accel):
    return ImuSample(omega=omega, accel=accel, stamp=0.0)


class TestPropagateMean:
    def test_stationary_equilibrium(self, rng):
        imu = make_imu_state(rng)
        imu.vel = np.zeros(3)
        sample = _sample(imu.bg, imu.ba - imu.rot.T @ GRAVITY)
        out = filt.propagate_mean(imu, sample, 0.01)
        assert np.abs(out.rot - imu.rot).max() < 1e-12
        assert np.abs(out.vel).max() < 1e-12
        assert np.abs(out.pos - imu.pos).max() < 1e-12

    def test_constant_world_acceleration(self, rng):
        # a = R^T (e1 - g) gives vdot = e1; closed form after 1 s
        imu = make_imu_state(rng)
        imu.vel = np.zeros(3)
        imu.pos = np.zeros(3)
        sample = _sample(imu.bg, imu.rot.T @ (np.array([1.0, 0, 0]) - GRAVITY) + imu.ba)
        for _ in range(100):
            imu = filt.propagate_mean(imu, sample, 0.01)
        assert np.allclose(imu.pos, [0.5, 0, 0], atol=1e-9)
        assert np.allclose(imu.vel, [1.0, 0, 0], atol=1e-9)

    def test_pure_spin_quarter_turn(self, rng):
        # exact SO(3) solution: R(T) = R0 exp([0,0,1] T) at T = pi/2
        imu = make_imu_state(rng)
        rot0 = imu.rot.copy()
        sample = _sample(np.array([0.0, 0.0, 1.0]) + imu.bg,
                         imu.ba + imu.rot.T @ (-GRAVITY))
        total = np.pi / 2
        steps = int(total // 0.01)
        for _ in range(steps):
            imu = filt.propagate_mean(imu, sample, 0.01)
        rem = total - steps * 0.01
        if rem > 1e-12:
            imu = filt.propagate_mean(imu, sample, rem)
        expected = rot0 @ so3_exp([0.0, 0.0, np.pi / 2])
        assert np.abs(imu.rot - expected).max() < 1e-6

    @pytest.mark.parametrize("dt", [0.0, -0.01, 0.2])
    def test_rejects_bad_dt(self, dt, rng):
        imu = make_imu_state(rng)
        with pytest.raises(ValueError):
            filt.propagate_mean(imu, _sample(np.zeros(3), np.zeros(3)), dt)


class TestErrorMatrices:
    def test_partial_invariant_position_independent(self, rng):
        state = make_filter_state(rng, ErrorMode.PARTIAL_INVARIANT, n_clones=0)
        sample = _sample(rng.normal(size=3), rng.normal(size=3))
        F1, G1 = filt.error_matrices(state, sample)
        state.imu.pos = state.imu.pos + np.array([123.0, -45.0, 6.7])
        F2, G2 = filt.error_matrices(state, sample)
        assert np.array_equal(F1, F2)
        assert np.array_equal(G1, G2)

    def test_partial_blocks_at_rest(self, rng):
        imu = ImuState.identity()
        state = FilterState(imu=imu, mode=ErrorMode.PARTIAL_INVARIANT)
        F, G = filt.error_matrices(state, _sample(np.zeros(3), np.zeros(3)))
        assert np.allclose(F[3:6, 0:3], filt.skew(GRAVITY))
        # all velocity-dependent blocks vanish at zero velocity
        assert np.allclose(F[3:6, 9:12], 0.0)
        assert np.allclose(F[6:9, 0:3], 0.0)
        assert np.allclose(F[6:9, 3:6], np.eye(3))

    @pytest.mark.parametrize("mode", MODES)
    def test_matches_finite_differences(self, mode, rng):
        for _ in range(3):
            state = make_filter_state(rng, mode, n_clones=0)
            sample = _sample(rng.normal(size=3) * 0.5, rng.normal(size=3) * 3)
            F, G = filt.error_matrices(state, sample)
            F_fd, G_fd = fd_error_dynamics(state, sample)
            scale = max(np.abs(F).max(), 1.0)
            assert np.abs(F - F_fd).max() / scale < 1e-4
            assert np.abs(G - G_fd).max() / max(np.abs(G).max(), 1.0) < 1e-4


class TestPropagateCovariance:
    def test_zero_dynamics_zero_noise_is_identity(self, rng):
        state = make_filter_state(rng, ErrorMode.PARTIAL_INVARIANT)
        before = state.cov.copy()
        F = np.zeros((15, 15))
        G = np.zeros((15, 12))
        filt.propagate_covariance(state, F, G, NoiseParams(), 0.01)
        assert np.allclose(state.cov, before, atol=1e-15)

    def test_from_zero_covariance_structure(self, rng):
        state = make_filter_state(rng, ErrorMode.PARTIAL_INVARIANT, n_clones=0,
                                  cov_scale=0.0)
        sample = _sample(rng.normal(size=3), rng.normal(size=3))
        F, G = filt.error_matrices(state, sample)
        noise = NoiseParams()
        dt = 0.01
        filt.propagate_covariance(state, F, G, noise, dt)
        Phi = filt.kernels.transition(F, dt)
        N = (G * np.repeat(noise.qc_diag(), 3)) @ G.T
        expected = 0.5 * dt * (N + Phi @ N @ Phi.T)
        assert np.allclose(state.cov, expected, atol=1e-15)
        assert np.linalg.eigvalsh(state.cov).min() >= -1e-12

    @pytest.mark.parametrize("mode", MODES)
    def test_van_loan_reference(self, mode, rng):
        # reference discretization: dense matrix exponential (Van Loan),
        # accumulated over 100 steps from zero covariance at a stationary state
        state = make_filter_state(rng, mode, n_clones=0, cov_scale=0.0)
        state.imu.vel = np.zeros(3)
        sample = _sample(state.imu.bg,
                         state.imu.ba - state.imu.rot.T @ GRAVITY)
        F, G = filt.error_matrices(state, sample)
        noise = NoiseParams()
        dt = 0.01

        Qc = (G * np.repeat(noise.qc_diag(), 3)) @ G.T
        M = np.zeros((30, 30))
        M[:15, :15] = -F
        M[:15, 15:] = Qc
        M[15:, 15:] = F.T
        E = expm(M * dt)
        Phi_ref = E[15:, 15:].T
        Qd_ref = Phi_ref @ E[:15, 15:]

        P_ref = np.zeros((15, 15))
        for _ in range(100):
            P_ref = Phi_ref @ P_ref @ Phi_ref.T + Qd_ref
            filt.propagate_covariance(state, F, G, noise, dt)
        rel = (np.linalg.norm(state.cov - P_ref, "fro")
               / np.linalg.norm(P_ref, "fro"))
        assert rel < 0.01


class TestAugmentMarginalize:
    def test_identity_extrinsics_clone_equals_imu_pose(self, rng):
        state = make_filter_state(rng, ErrorMode.PARTIAL_INVARIANT, n_clones=0)
        extr = CameraExtrinsics(rot_ic=np.eye(3), pos_ic=np.zeros(3))
        filt.augment_clone(state, extr, stamp=1.0)
        clone = state.clones[0]
        assert np.allclose(clone.rot, state.imu.rot)
        assert np.allclose(clone.pos, state.imu.pos)
        J = filt.clone_jacobian(state, extr)
        block = state.cov[15:, 15:]
        assert np.allclose(block, J @ state.cov[:15, :15] @ J.T, atol=1e-12)

    def test_zero_covariance_stays_zero(self, rng):
        state = make_filter_state(rng, ErrorMode.PARTIAL_INVARIANT,
                                  n_clones=0, cov_scale=0.0)
        extr = CameraExtrinsics(rot_ic=random_rotation(rng), pos_ic=rng.normal(size=3))
        filt.augment_clone(state, extr, stamp=1.0)
        assert np.allclose(state.cov, 0.0)

    @pytest.mark.parametrize("mode", MODES)
    def test_clone_jacobian_finite_difference(self, mode, rng):
        state = make_filter_state(rng, mode)
        extr = CameraExtrinsics(rot_ic=random_rotation(rng),
                                pos_ic=rng.normal(size=3) * 0.3)
        J = filt.clone_jacobian(state, extr)
        J_fd = fd_clone_jacobian(state, extr)
        assert np.abs(J - J_fd).max() / max(np.abs(J).max(), 1.0) < 1e-5

    def test_window_full_raises(self, rng):
        state = make_filter_state(rng, ErrorMode.PARTIAL_INVARIANT, n_clones=2)
        extr = CameraExtrinsics(rot_ic=np.eye(3), pos_ic=np.zeros(3))
        with pytest.raises(ValueError):
            filt.augment_clone(state, extr, stamp=5.0, n_max=2)

    def test_stamps_must_increase(self, rng):
        state = make_filter_state(rng, ErrorMode.PARTIAL_INVARIANT, n_clones=2)
        extr = CameraExtrinsics(rot_ic=np.eye(3), pos_ic=np.zeros(3))
        with pytest.raises(ValueError):
            filt.augment_clone(state, extr, stamp=state.clones[-1].stamp)

    def test_marginalize_none_is_noop(self, rng):
        state = make_filter_state(rng, ErrorMode.PARTIAL_INVARIANT, n_clones=3)
        before = state.cov.copy()
        filt.marginalize_clones(state, [])
        assert np.array_equal(state.cov, before)
        assert len(state.clones) == 3

    def test_marginalize_keeps_remaining_blocks(self, rng):
        state = make_filter_state(rng, ErrorMode.PARTIAL_INVARIANT, n_clones=3)
        before = state.cov.copy()
        stamps = [c.stamp for c in state.clones]
        filt.marginalize_clones(state, [1])
        assert [c.stamp for c in state.clones] == [stamps[0], stamps[2]]
        keep = list(range(15 + 6)) + list(range(15 + 12, 15 + 18))
        assert np.array_equal(state.cov, before[np.ix_(keep, keep)])

    def test_marginalize_to_single_clone(self, rng):
        state = make_filter_state(rng, ErrorMode.PARTIAL_INVARIANT, n_clones=3)
        filt.marginalize_clones(state, [0, 2])
        assert state.cov.shape == (21, 21)
        assert np.allclose(state.cov, state.cov.T, atol=1e-12)
        assert np.linalg.eigvalsh(state.cov).min() >= -1e-9 * state.cov.trace()

    def test_marginalize_all_forbidden(self, rng):
        state = make_filter_state(rng, ErrorMode.PARTIAL_INVARIANT, n_clones=2)
        with pytest.raises(ValueError):
            filt.marginalize_clones(state, [0, 1])


class TestKalmanUpdate:
    def test_zero_residual_keeps_state(self, rng):
        state = make_filter_state(rng, ErrorMode.PARTIAL_INVARIANT)
        pos_before = state.imu.pos.copy()
        trace_before = state.cov.trace()
        H = rng.normal(size=(3, state.error_dim))
        _, ok = filt.kalman_update(state, H, np.zeros(3), np.eye(3))
        assert ok
        assert np.allclose(state.imu.pos, pos_before, atol=1e-15)
        assert state.cov.trace() <= trace_before + 1e-12

    def test_huge_noise_ignores_measurement(self, rng):
        state = make_filter_state(rng, ErrorMode.PARTIAL_INVARIANT)
        pos_before = state.imu.pos.copy()
        H = np.zeros((1, state.error_dim))
        H[0, 6] = 1.0
        _, ok = filt.kalman_update(state, H, np.array([0.5]),
                                   np.array([[1e12]]))
        assert ok
        assert np.abs(state.imu.pos - pos_before).max() < 1e-9

    def test_scalar_hand_case(self):
        # P = I, H = e1^T, R = 1, r = 1: gain 0.5, posterior variance 0.5
        imu = ImuState.identity()
        state = FilterState(imu=imu, mode=ErrorMode.PARTIAL_INVARIANT,
                            cov=np.eye(15))
        H = np.zeros((1, 15))
        H[0, 0] = 1.0
        _, ok = filt.kalman_update(state, H, np.array([1.0]), np.eye(1))
        assert ok
        assert abs(state.cov[0, 0] - 0.5) < 1e-12
        # injected correction: rotation moved by 0.5 about the first axis
        assert np.allclose(so3_log(state.imu.rot), [0.5, 0, 0], atol=1e-12)

    def test_gate_rejects_gross_residual(self, rng):
        state = make_filter_state(rng, ErrorMode.PARTIAL_INVARIANT)
        before = state.cov.copy()
        H = np.zeros((1, state.error_dim))
        H[0, 6] = 1.0
        _, ok = filt.kalman_update(state, H, np.array([1e6]), np.array([[1e-6]]))
        assert not ok
        assert np.array_equal(state.cov, before)

    def test_singular_innovation_skipped(self, rng):
        state = make_filter_state(rng, ErrorMode.PARTIAL_INVARIANT, cov_scale=0.0)
        H = np.zeros((1, state.error_dim))
        with pytest.warns(UserWarning):
            _, ok = filt.kalman_update(state, H, np.array([1.0]),
                                       np.array([[0.0]]))
        assert not ok

    def test_joseph_equals_standard_form(self, rng):
        state = make_filter_state(rng, ErrorMode.PARTIAL_INVARIANT)
        P = state.cov.copy()
        H = rng.normal(size=(4, state.error_dim))
        R = np.diag(rng.uniform(0.5, 2.0, 4))
        r = rng.normal(size=4) * 1e-3
        filt.kalman_update(state, H, r, R, gate=False)
        S = H @ P @ H.T + R
        K = P @ H.T @ np.linalg.inv(S)
        standard = P - K @ S @ K.T
        assert np.abs(state.cov - standard).max() < 1e-8

    def test_dimension_mismatch(self, rng):
        state = make_filter_state(rng, ErrorMode.PARTIAL_INVARIANT)
        with pytest.raises(ValueError):
            filt.kalman_update(state, np.zeros((2, 4)), np.zeros(2), np.eye(2))


@pytest.mark.parametrize("mode", MODES)
def test_covariance_stays_symmetric_psd_through_pipeline(mode, rng):
    state = make_filter_state(rng, mode, n_clones=0, cov_scale=0.0)
    noise = NoiseParams()
    extr = CameraExtrinsics(rot_ic=random_rotation(rng), pos_ic=rng.normal(size=3) * 0.1)
    stamp = 0.0
    for k in range(40):
        sample = ImuSample(omega=rng.normal(size=3) * 0.3,
                           accel=rng.normal(size=3) + [0, 0, 9.8],
                           stamp=stamp + 0.01)
        filt.propagate(state, sample, 0.01, noise)
        stamp += 0.01
        if k % 10 == 9:
            if len(state.clones) == 3:
                filt.marginalize_clones(state, [0])
            filt.augment_clone(state, extr, stamp, n_max=3)
        if k % 7 == 6:
            H = rng.normal(size=(2, state.error_dim))
            filt.kalman_update(state, H, rng.normal(size=2) * 1e-3,
                               0.01 * np.eye(2))
        cov = state.cov
        assert np.abs(cov - cov.T).max() < 1e-9
        assert np.linalg.eigvalsh(cov).min() >= -1e-9 * max(cov.trace(), 1e-30)
