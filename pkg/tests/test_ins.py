"""Mechanization and error-state model tests.

The key oracle here is a central finite-difference Jacobian of one true
mechanization step with respect to the 15-dim error vector, which pins the
block structure and signs of build_F under the package's injection
conventions.
"""

import numpy as np
import pytest

from anpmn.ins import (
    BA, BG, DP, DPSI, DV, ERR_DIM,
    ImuSample, NavState, ProcessNoiseSpec, TangentFrame,
    build_F, build_G, discretize_Q, gnss_h, gravity_ned, inject_and_reset,
    mechanize, quat_from_rotvec, quat_from_rpy, quat_mul, quat_normalize,
    quat_to_mat, rotvec_from_quat, skew,
)

ORIGIN = (np.radians(40.0), np.radians(15.0), 50.0)


def level_nav(yaw=0.0, vel=(0.0, 0.0, 0.0)):
    return NavState(
        lat=ORIGIN[0], lon=ORIGIN[1], height=ORIGIN[2],
        vel_ned=np.array(vel), att=quat_from_rpy(0.0, 0.0, yaw),
    )


def random_nav(rng):
    rpy = rng.uniform([-0.3, -0.3, -np.pi], [0.3, 0.3, np.pi])
    return NavState(
        lat=ORIGIN[0] + rng.uniform(-1e-4, 1e-4),
        lon=ORIGIN[1] + rng.uniform(-1e-4, 1e-4),
        height=ORIGIN[2] + rng.uniform(-20, 20),
        vel_ned=rng.uniform(-10, 10, 3),
        att=quat_from_rpy(*rpy),
    )


class TestQuaternions:
    def test_rotvec_round_trip(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            v = rng.uniform(-2.0, 2.0, 3)
            np.testing.assert_allclose(
                rotvec_from_quat(quat_from_rotvec(v)), v, atol=1e-12
            )

    def test_mat_composition(self):
        rng = np.random.default_rng(2)
        q1 = quat_normalize(rng.standard_normal(4))
        q2 = quat_normalize(rng.standard_normal(4))
        np.testing.assert_allclose(
            quat_to_mat(quat_mul(q1, q2)),
            quat_to_mat(q1) @ quat_to_mat(q2),
            atol=1e-12,
        )

    def test_yaw_convention(self):
        # body x at yaw psi points [cos psi, sin psi, 0] in NED
        q = quat_from_rpy(0.0, 0.0, np.radians(30.0))
        np.testing.assert_allclose(
            quat_to_mat(q) @ np.array([1.0, 0.0, 0.0]),
            [np.cos(np.radians(30)), np.sin(np.radians(30)), 0.0],
            atol=1e-12,
        )


class TestGravity:
    def test_equator(self):
        assert gravity_ned(0.0, 0.0)[2] == pytest.approx(9.7803, abs=1e-3)

    def test_pole(self):
        assert gravity_ned(np.pi / 2, 0.0)[2] == pytest.approx(9.8322, abs=1e-3)

    @pytest.mark.parametrize("lat", [0.0, 0.4, 0.8, 1.2])
    def test_free_air_decreases_with_height(self, lat):
        assert gravity_ned(lat, 1000.0)[2] < gravity_ned(lat, 0.0)[2]

    def test_only_down_component(self):
        g = gravity_ned(0.7, 100.0)
        assert g[0] == 0.0 and g[1] == 0.0


class TestTangentFrame:
    def test_round_trip(self):
        frame = TangentFrame(*ORIGIN)
        rng = np.random.default_rng(3)
        for _ in range(20):
            ned = rng.uniform(-5000, 5000, 3)
            back = frame.to_ned(*frame.to_geodetic(ned))
            np.testing.assert_allclose(back, ned, atol=1e-6)

    def test_origin_maps_to_zero(self):
        frame = TangentFrame(*ORIGIN)
        np.testing.assert_allclose(frame.to_ned(*ORIGIN), np.zeros(3), atol=1e-12)


class TestMechanize:
    def test_stationary_force_balance(self):
        nav = level_nav()
        g = gravity_ned(nav.lat, nav.height)
        f_b = -quat_to_mat(nav.att).T @ g
        imu = ImuSample(t=0.0, f_b=f_b, w_b=np.zeros(3))
        out = mechanize(nav, imu, np.zeros(3), np.zeros(3), dt=0.01)
        frame = TangentFrame(*ORIGIN)
        assert np.linalg.norm(frame.to_ned(out.lat, out.lon, out.height)) < 1e-6
        assert np.linalg.norm(out.vel_ned) < 1e-9

    def test_free_fall(self):
        nav = level_nav()
        g = gravity_ned(nav.lat, nav.height)[2]
        imu = ImuSample(t=0.0, f_b=np.zeros(3), w_b=np.zeros(3))
        out = mechanize(nav, imu, np.zeros(3), np.zeros(3), dt=0.01)
        assert out.vel_ned[2] == pytest.approx(g * 0.01, abs=1e-9)

    def test_pure_yaw_rotation(self):
        nav = level_nav()
        imu = ImuSample(t=0.0, f_b=np.zeros(3), w_b=np.array([0, 0, np.pi / 2]))
        for _ in range(100):
            nav = mechanize(nav, imu, np.zeros(3), np.zeros(3), dt=0.01)
        heading = np.degrees(
            np.arctan2(*(quat_to_mat(nav.att) @ [1, 0, 0])[[1, 0]])
        )
        assert heading == pytest.approx(90.0, abs=0.01)

    def test_quaternion_norm_stays_unit(self):
        rng = np.random.default_rng(4)
        nav = level_nav()
        for _ in range(2000):
            imu = ImuSample(0.0, rng.uniform(-2, 2, 3), rng.uniform(-0.5, 0.5, 3))
            nav = mechanize(nav, imu, np.zeros(3), np.zeros(3), dt=0.01)
        assert abs(np.linalg.norm(nav.att) - 1.0) < 1e-9

    def test_rejects_bad_dt(self):
        nav = level_nav()
        imu = ImuSample(0.0, np.zeros(3), np.zeros(3))
        with pytest.raises(ValueError):
            mechanize(nav, imu, np.zeros(3), np.zeros(3), dt=0.0)
        with pytest.raises(ValueError):
            mechanize(nav, imu, np.zeros(3), np.zeros(3), dt=0.5)


def error_step(nav, imu, frame, dx, dt):
    """Oracle: propagate truth = nominal (+) dx and nominal one step, then
    re-extract the error.  Biases mean the measurement overshoots truth."""
    ned_t = frame.to_ned(nav.lat, nav.lon, nav.height) + dx[DP]
    lat, lon, h = frame.to_geodetic(ned_t)
    truth = NavState(
        lat=lat, lon=lon, height=h,
        vel_ned=nav.vel_ned + dx[DV],
        att=quat_normalize(quat_mul(quat_from_rotvec(dx[DPSI]), nav.att)),
    )
    true_imu = ImuSample(imu.t, imu.f_b - dx[BA], imu.w_b - dx[BG])
    truth1 = mechanize(truth, true_imu, np.zeros(3), np.zeros(3), dt)
    nom1 = mechanize(nav, imu, np.zeros(3), np.zeros(3), dt)

    out = np.empty(ERR_DIM)
    out[DP] = (
        frame.to_ned(truth1.lat, truth1.lon, truth1.height)
        - frame.to_ned(nom1.lat, nom1.lon, nom1.height)
    )
    out[DV] = truth1.vel_ned - nom1.vel_ned
    # attitude error as the navigation-frame relative rotation's log map
    q_err = quat_mul(truth1.att, np.array([1, -1, -1, -1]) * nom1.att)
    out[DPSI] = rotvec_from_quat(q_err)
    out[BA] = dx[BA]
    out[BG] = dx[BG]
    return out


class TestErrorModel:
    def test_F_matches_finite_difference_jacobian(self):
        # continuous-time F vs (J - I)/dt of one true mechanization step.
        # dt is small so the O(dt) discretization residue stays below 1e-4.
        # Step sizes per component: dynamics are exactly linear in dp/dv, so
        # large steps there lift the signal over the geodetic float noise
        # floor; attitude/bias steps stay small for linearity.
        rng = np.random.default_rng(7)
        frame = TangentFrame(*ORIGIN)
        dt = 1e-4
        h_vec = np.concatenate([
            np.full(3, 1.0),    # dp, m
            np.full(3, 0.5),    # dv, m/s
            np.full(3, 1e-4),   # dpsi, rad
            np.full(3, 1e-3),   # ba, m/s^2
            np.full(3, 1e-4),   # bg, rad/s
        ])
        blocks = [(DP, DV), (DV, DPSI), (DV, BA), (DPSI, BG)]
        for _ in range(20):
            nav = random_nav(rng)
            imu = ImuSample(0.0, rng.uniform(-3, 3, 3), rng.uniform(-0.3, 0.3, 3))
            J = np.empty((ERR_DIM, ERR_DIM))
            for i in range(ERR_DIM):
                e = np.zeros(ERR_DIM)
                e[i] = h_vec[i]
                J[:, i] = (
                    error_step(nav, imu, frame, e, dt)
                    - error_step(nav, imu, frame, -e, dt)
                ) / (2 * h_vec[i])
            F_fd = (J - np.eye(ERR_DIM)) / dt
            F = build_F(nav, imu.f_b)
            for rows, cols in blocks:
                ref = F[rows, cols]
                err = np.linalg.norm(F_fd[rows, cols] - ref) / np.linalg.norm(ref)
                assert err < 1e-4

    def test_F_level_attitude_skew_block(self):
        nav = level_nav()
        F = build_F(nav, np.array([0.0, 0.0, -9.8]))
        expected = -skew([0.0, 0.0, -9.8])
        np.testing.assert_allclose(F[DV, DPSI], expected, atol=1e-12)
        np.testing.assert_array_equal(F[DP, DV], np.eye(3))

    def test_F_zero_force_zero_skew(self):
        F = build_F(level_nav(yaw=0.3), np.zeros(3))
        np.testing.assert_allclose(F[DV, DPSI], np.zeros((3, 3)), atol=1e-15)

    def test_F_bias_rows_zero(self):
        rng = np.random.default_rng(8)
        F = build_F(random_nav(rng), rng.uniform(-5, 5, 3))
        np.testing.assert_array_equal(F[9:, :], np.zeros((6, ERR_DIM)))

    def test_G_shape_and_blocks(self):
        rng = np.random.default_rng(9)
        nav = random_nav(rng)
        G = build_G(nav)
        assert G.shape == (15, 12)
        np.testing.assert_allclose(G[DV, 0:3] @ G[DV, 0:3].T, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(G[DPSI, 3:6] @ G[DPSI, 3:6].T, np.eye(3), atol=1e-12)
        np.testing.assert_array_equal(G[DP, :], np.zeros((3, 12)))
        nav_id = level_nav()
        np.testing.assert_allclose(build_G(nav_id)[DV, 0:3], np.eye(3), atol=1e-12)


class TestDiscretizeQ:
    def test_diagonal_mapping(self):
        G = np.zeros((15, 12))
        G[3:15, :] = np.eye(12)
        Qd = discretize_Q(G, np.ones(12), dt=0.01)
        np.testing.assert_allclose(np.diag(Qd)[3:], 0.01 * np.ones(12))

    def test_psd_for_random_G(self):
        rng = np.random.default_rng(10)
        for _ in range(10):
            G = rng.standard_normal((15, 12))
            Qd = discretize_Q(G, rng.uniform(0, 2, 12), dt=0.02)
            assert np.min(np.linalg.eigvalsh(Qd)) >= -1e-12
            np.testing.assert_allclose(Qd, Qd.T)

    def test_hand_example(self):
        G = np.array([[1.0, 2.0], [0.0, 1.0]])
        Qc = np.diag([3.0, 4.0])
        np.testing.assert_allclose(
            discretize_Q(G, Qc, 0.5), G @ Qc @ G.T * 0.5, atol=1e-15
        )

    def test_rejects_negative_dt(self):
        with pytest.raises(ValueError):
            discretize_Q(np.zeros((15, 12)), np.ones(12), dt=-0.01)


class TestMeasurementAndInjection:
    def test_gnss_h_zero_error(self):
        frame = TangentFrame(*ORIGIN)
        nav = level_nav()
        np.testing.assert_allclose(
            gnss_h(np.zeros(15), nav, frame),
            frame.to_ned(nav.lat, nav.lon, nav.height),
        )

    def test_gnss_h_additive(self):
        frame = TangentFrame(*ORIGIN)
        nav = level_nav()
        err = np.zeros(15)
        err[DP] = [1.0, 2.0, 3.0]
        np.testing.assert_allclose(
            gnss_h(err, nav, frame) - gnss_h(np.zeros(15), nav, frame),
            [1.0, 2.0, 3.0],
            atol=1e-9,
        )

    def test_inject_zero_error_is_identity(self):
        frame = TangentFrame(*ORIGIN)
        nav = level_nav(yaw=0.5, vel=(1.0, 2.0, 0.0))
        out, ba, bg = inject_and_reset(nav, np.zeros(15), np.zeros(3), np.zeros(3), frame)
        assert (out.lat, out.lon, out.height) == (nav.lat, nav.lon, nav.height)
        np.testing.assert_array_equal(out.vel_ned, nav.vel_ned)
        np.testing.assert_allclose(out.att, nav.att, atol=1e-15)

    def test_inject_small_heading_correction(self):
        frame = TangentFrame(*ORIGIN)
        nav = level_nav(yaw=0.2)
        err = np.zeros(15)
        err[DPSI] = [0.0, 0.0, 1e-3]
        out, _, _ = inject_and_reset(nav, err, np.zeros(3), np.zeros(3), frame)
        x_new = quat_to_mat(out.att) @ np.array([1.0, 0.0, 0.0])
        assert np.arctan2(x_new[1], x_new[0]) == pytest.approx(0.2 + 1e-3, abs=1e-9)

    def test_inject_accumulates_biases(self):
        frame = TangentFrame(*ORIGIN)
        err = np.zeros(15)
        err[BA] = [0.01, -0.02, 0.03]
        err[BG] = [1e-4, 2e-4, -1e-4]
        _, ba, bg = inject_and_reset(
            level_nav(), err, np.array([0.1, 0.0, 0.0]), np.zeros(3), frame
        )
        np.testing.assert_allclose(ba, [0.11, -0.02, 0.03])
        np.testing.assert_allclose(bg, [1e-4, 2e-4, -1e-4])

    def test_inject_then_mechanize_matches_corrected_truth(self):
        # correcting first then propagating equals propagating the corrected
        # state: closed-loop injection must not distort the kinematics
        frame = TangentFrame(*ORIGIN)
        rng = np.random.default_rng(11)
        nav = random_nav(rng)
        err = np.zeros(15)
        err[DP] = rng.uniform(-2, 2, 3)
        err[DV] = rng.uniform(-0.5, 0.5, 3)
        err[DPSI] = rng.uniform(-0.01, 0.01, 3)
        corrected, ba, bg = inject_and_reset(nav, err, np.zeros(3), np.zeros(3), frame)
        imu = ImuSample(0.0, rng.uniform(-2, 2, 3), rng.uniform(-0.2, 0.2, 3))
        a = mechanize(corrected, imu, ba, bg, 0.01)
        b = mechanize(corrected, imu, np.zeros(3), np.zeros(3), 0.01)
        # zero injected bias: both paths identical
        np.testing.assert_allclose(a.vel_ned, b.vel_ned, atol=1e-6)
        np.testing.assert_allclose(
            frame.to_ned(a.lat, a.lon, a.height),
            frame.to_ned(b.lat, b.lon, b.height),
            atol=1e-6,
        )


class TestProcessNoiseSpec:
    def test_qc_diag_layout(self):
        spec = ProcessNoiseSpec(sig_a=0.01, sig_g=0.002, sig_ab=1e-4, sig_gb=1e-5)
        qc = spec.qc_diag(0.01)
        np.testing.assert_allclose(qc[0:3], 0.01**2 * 0.01)
        np.testing.assert_allclose(qc[3:6], 0.002**2 * 0.01)
        np.testing.assert_allclose(qc[6:9], 1e-4**2 / 0.01)
        np.testing.assert_allclose(qc[9:12], 1e-5**2 / 0.01)

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            ProcessNoiseSpec(sig_a=-0.01, sig_g=0.002, sig_ab=0, sig_gb=0)
