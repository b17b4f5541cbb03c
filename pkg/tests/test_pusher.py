"""Velocity rotation, N-matrix structure, and position push."""
import numpy as np
import pytest

from wpic import pusher

E_CHARGE = -1.6e-19
E_MASS = 9.1e-31


class TestNMatrix:
    def test_zero_field_is_identity(self):
        n = pusher.build_n_matrix(E_CHARGE, E_MASS, 1e-10,
                                  np.zeros(3), np.zeros(3))
        np.testing.assert_array_equal(n, np.eye(3))

    def test_off_diagonal_magnitude_cyclotron_parameters(self):
        # |q dt Bz / 2m| for the validation parameters is 0.02
        bz = 2.275e-3
        n = pusher.build_n_matrix(E_CHARGE, E_MASS, 1e-10,
                                  [0, 0, bz], [0, 0, bz])
        expected = abs(E_CHARGE) * 1e-10 * bz / (2 * E_MASS)
        assert expected == pytest.approx(0.02, rel=2e-3)
        assert abs(n[0, 1]) == pytest.approx(expected, rel=1e-12)
        assert n[0, 1] == -n[1, 0]

    def test_determinant(self):
        rng = np.random.Generator(np.random.Philox(50))
        for _ in range(20):
            b = rng.standard_normal(3) * 1e-2
            n = pusher.build_n_matrix(1.6e-19, E_MASS, 1e-11, b, b)
            h = (1.6e-19 * 1e-11 / (2 * E_MASS)) * b
            assert np.linalg.det(n) == pytest.approx(1 + h @ h, rel=1e-12)
            assert np.linalg.det(n) >= 1.0

    def test_rotation_part_orthogonal(self):
        rng = np.random.Generator(np.random.Philox(51))
        for _ in range(20):
            b_prev = rng.standard_normal(3) * 5e-3
            b_next = rng.standard_normal(3) * 5e-3
            n = pusher.build_n_matrix(E_CHARGE, E_MASS, 1e-10, b_prev, b_next)
            rot = np.linalg.inv(n) @ n.T
            np.testing.assert_allclose(rot.T @ rot, np.eye(3),
                                       rtol=0, atol=1e-13)

    def test_invalid_parameters(self):
        with pytest.raises(ValueError):
            pusher.build_n_matrix(1.0, -1.0, 1.0, np.zeros(3), np.zeros(3))


class TestAccelerate:
    def test_reduces_to_electric_kick_without_b(self):
        v = np.array([1.0e5, -2.0e5, 0.0])
        e = np.array([3.0, 1.0, 0.0])
        out = pusher.accelerate(v, e, E_CHARGE, E_MASS, 1e-10,
                                np.zeros(3), np.zeros(3))
        np.testing.assert_allclose(
            out, v + (E_CHARGE * 1e-10 / E_MASS) * e, rtol=1e-15)

    def test_matches_explicit_matrix_form(self):
        rng = np.random.Generator(np.random.Philox(52))
        for _ in range(25):
            v = rng.standard_normal(3) * 1e6
            e = rng.standard_normal(3) * 1e2
            b_prev = rng.standard_normal(3) * 5e-3
            b_next = rng.standard_normal(3) * 5e-3
            q, m, dt = 1.6e-19, E_MASS, 2e-11
            n = pusher.build_n_matrix(q, m, dt, b_prev, b_next)
            expected = np.linalg.inv(n) @ n.T @ v \
                + (q * dt / m) * np.linalg.inv(n) @ e
            got = pusher.accelerate(v, e, q, m, dt, b_prev, b_next)
            np.testing.assert_allclose(got, expected, rtol=1e-12)

    def test_speed_preserved_without_e(self):
        v = np.array([7.0e7, 1.0e7, 0.0])
        b = np.array([0.0, 0.0, 2.275e-3])
        speed0 = np.linalg.norm(v)
        for _ in range(500):
            v = pusher.accelerate(v, np.zeros(3), E_CHARGE, E_MASS, 1e-10, b, b)
        assert np.linalg.norm(v) == pytest.approx(speed0, rel=1e-13)

    def test_rotation_angle_oracle(self):
        # uniform B_z rotates the in-plane velocity by -2*atan(h_z) per
        # step (counter-clockwise for an electron in positive B_z)
        q, m, dt, bz = E_CHARGE, E_MASS, 1e-10, 2.275e-3
        h = q * dt * bz / (2 * m)
        angle = -2.0 * np.arctan(h)
        v = np.array([1.0e8, 0.0, 0.0])
        b = np.array([0.0, 0.0, bz])
        out = pusher.accelerate(v, np.zeros(3), q, m, dt, b, b)
        rot = np.array([[np.cos(angle), -np.sin(angle)],
                        [np.sin(angle), np.cos(angle)]])
        np.testing.assert_allclose(out[:2], rot @ v[:2], rtol=1e-12)
        assert out[1] > 0.0  # counter-clockwise

    def test_vz_stays_zero_with_in_plane_e_and_bz(self):
        v = np.array([1e6, 2e6, 0.0])
        e = np.array([10.0, -5.0, 0.0])
        b = np.array([0.0, 0.0, 1e-3])
        for _ in range(100):
            v = pusher.accelerate(v, e, E_CHARGE, E_MASS, 1e-10, b, b)
            assert v[2] == 0.0

    def test_gyroradius_validation_parameters(self):
        # m v / (q B) = 0.25 m; the discrete orbit radius agrees to < 0.1%
        q, m, dt = E_CHARGE, E_MASS, 1e-10
        bz = 2.275e-3
        speed = 1e8
        assert m * speed / (abs(q) * bz) == pytest.approx(0.25, rel=1e-3)
        v = np.array([0.0, speed, 0.0])
        b = np.array([0.0, 0.0, bz])
        pos = np.array([0.25, 0.0])
        traj = [pos.copy()]
        for _ in range(200):
            v = pusher.accelerate(v, np.zeros(3), q, m, dt, b, b)
            pos = pusher.push_positions(pos, v, dt)
            traj.append(pos.copy())
        traj = np.array(traj)
        center = (traj.max(axis=0) + traj.min(axis=0)) / 2
        radii = np.linalg.norm(traj - center, axis=1)
        assert np.max(np.abs(radii - 0.25)) / 0.25 < 1e-3

    def test_batch_matches_scalar(self):
        rng = np.random.Generator(np.random.Philox(53))
        v = rng.standard_normal((10, 3)) * 1e6
        e = rng.standard_normal((10, 3)) * 1e2
        bz = rng.standard_normal(10) * 1e-3
        b = np.zeros((10, 3))
        b[:, 2] = bz
        batch = pusher.accelerate(v, e, E_CHARGE, E_MASS, 1e-10, b, b)
        for k in range(10):
            single = pusher.accelerate(v[k], e[k], E_CHARGE, E_MASS,
                                       1e-10, b[k], b[k])
            np.testing.assert_array_equal(batch[k], single)

    def test_reversible(self):
        # undoing the sub-steps in reverse order with -dt (half-step
        # fields swapped) returns both velocity and position
        q, m, dt = E_CHARGE, E_MASS, 1e-10
        b_prev = np.array([0.0, 0.0, 2.0e-3])
        b_next = np.array([0.0, 0.0, 2.5e-3])
        e = np.array([5.0, -2.0, 0.0])
        v0 = np.array([3.0e7, -1.0e7, 0.0])
        r0 = np.array([0.1, 0.2])
        v1 = pusher.accelerate(v0, e, q, m, dt, b_prev, b_next)
        r1 = pusher.push_positions(r0, v1, dt)
        r_back = pusher.push_positions(r1, v1, -dt)
        v_back = pusher.accelerate(v1, e, q, m, -dt, b_next, b_prev)
        np.testing.assert_allclose(v_back, v0, rtol=1e-12)
        np.testing.assert_allclose(r_back, r0, rtol=1e-12)


class TestPush:
    def test_zero_velocity(self, two_tri):
        pos, cell = pusher.push([0.2, 0.2], np.zeros(3), 0, 1e-9, two_tri)
        np.testing.assert_array_equal(pos, [0.2, 0.2])
        assert cell == 0

    def test_stays_in_cell(self, two_tri):
        pos, cell = pusher.push([0.2, 0.2], np.array([1e6, 1e6, 0.0]),
                                0, 1e-9, two_tri)
        np.testing.assert_allclose(pos, [0.201, 0.201])
        assert cell == 0

    def test_crosses_to_neighbor(self, two_tri):
        pos, cell = pusher.push([0.45, 0.45], np.array([1e8, 1e8, 0.0]),
                                0, 2e-9, two_tri)
        np.testing.assert_allclose(pos, [0.65, 0.65])
        assert cell == 1

    def test_species_speed_warning(self, caplog):
        import logging
        with caplog.at_level(logging.WARNING, logger="wpic.pusher"):
            pusher.Species(name="fast", q=-1.6e-19, m=9.1e-31,
                           pos=np.zeros((1, 2)),
                           vel=np.array([[2.9e8, 0.0, 0.0]]),
                           cell=np.zeros(1, dtype=np.int64),
                           alive=np.ones(1, dtype=bool))
        assert any("non-relativistic" in r.message for r in caplog.records)
