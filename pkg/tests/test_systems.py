import numpy as np
import pytest

from kedmd_mpc.errors import ConfigurationError, DomainError
from kedmd_mpc.geometry import Box
from kedmd_mpc.systems import TankParams, make_four_tank, make_linear, make_system, make_van_der_pol, shift_to_origin


def fd_jacobian(f, x, h=1e-7):
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        cols.append((f(x + e) - f(x - e)) / (2 * h))
    return np.stack(cols, axis=1)


class TestBox:
    def test_lattice_and_vertices(self):
        b = Box((-1.0, 0.0), (1.0, 2.0))
        assert b.lattice(3).shape == (9, 2)
        assert {tuple(v) for v in b.vertices()} == {(-1, 0), (-1, 2), (1, 0), (1, 2)}
        assert b.diameter == pytest.approx(np.sqrt(8))

    def test_contains_project_shift(self):
        b = Box.cube(-1.0, 1.0, 2)
        np.testing.assert_array_equal(b.contains([[0, 0], [2, 0]]), [True, False])
        np.testing.assert_array_equal(b.project([3.0, -4.0]), [1.0, -1.0])
        s = b.shift([0.5, 0.5])
        np.testing.assert_allclose(s.lo, [-1.5, -1.5])

    def test_empty_box_rejected(self):
        with pytest.raises(ValueError):
            Box((1.0,), (0.0,))


class TestVanDerPol:
    def test_step_matches_hand_formula(self):
        sys = make_van_der_pol()
        x, u = np.array([0.3, -0.7]), np.array([1.2])
        dt, nu = 0.05, 0.1
        expected = [x[0] + dt * x[1], x[1] + dt * (nu * (1 - x[0]) ** 2 * x[1] - x[0] + u[0])]
        np.testing.assert_allclose(sys.step(x, u), expected, rtol=0, atol=1e-15)

    def test_batched_step_equals_loop(self):
        sys = make_van_der_pol()
        rng = np.random.default_rng(0)
        X, U = rng.uniform(-2, 2, (7, 2)), rng.uniform(-2, 2, (7, 1))
        np.testing.assert_allclose(sys.step(X, U), [sys.step(x, u) for x, u in zip(X, U)])

    def test_jacobian_matches_finite_differences(self):
        sys = make_van_der_pol()
        x, u = np.array([0.4, -1.1]), np.array([0.3])
        _, Jx, Ju = sys.linearize(x, u)
        np.testing.assert_allclose(Jx, fd_jacobian(lambda z: sys.step(z, u), x), atol=1e-8)
        np.testing.assert_allclose(Ju, fd_jacobian(lambda v: sys.step(x, v), u), atol=1e-8)

    def test_input_outside_box(self):
        with pytest.raises(DomainError):
            make_van_der_pol().step([0.0, 0.0], [2.5])

    def test_origin_is_fixed_point(self):
        assert not np.any(make_van_der_pol().step([0.0, 0.0], [0.0]))


class TestFourTank:
    def test_exact_steady_state_close_to_quote(self):
        p = TankParams.from_json()
        np.testing.assert_allclose(p.steady_state(), p.x_bar, atol=1e-3)

    def test_equilibrium_residual(self):
        sys = make_four_tank()
        assert sys.equilibrium.residual(sys) <= 1e-6

    def test_shifted_origin_exact(self, tanks):
        assert np.linalg.norm(tanks.step(np.zeros(4), np.zeros(2))) <= 1e-15
        assert tanks.domain.contains(np.zeros(4))
        assert tanks.input_box.contains(np.zeros(2))

    def test_jacobian(self, tanks):
        z, v = np.array([0.1, -0.05, 0.2, 0.0]), np.array([0.3, -0.2])
        _, Jx, Ju = tanks.linearize(z, v)
        np.testing.assert_allclose(Jx, fd_jacobian(lambda s: tanks.step(s, v), z), atol=1e-7)
        np.testing.assert_allclose(Ju, fd_jacobian(lambda w: tanks.step(z, w), v), atol=1e-9)

    def test_negative_level_rejected(self):
        sys = make_four_tank()
        with pytest.raises(DomainError):
            sys.step([-0.1, 0.5, 0.5, 0.5], [1.0, 1.0])

    def test_lower_tanks_drain_into_upper_pair(self):
        # tank 3 feeds tank 1: raising h3 raises the successor of h1
        sys = make_four_tank()
        x = np.array([0.6, 0.6, 0.6, 0.6])
        y = x.copy()
        y[2] += 0.1
        assert sys.step(y, [1.0, 1.0])[0] > sys.step(x, [1.0, 1.0])[0]

    def test_invalid_parameters(self):
        p = TankParams.from_json()
        with pytest.raises(ConfigurationError):
            TankParams(p.a, p.S, 1.2, p.gamma_b, p.g, p.dt, p.x_bar, p.u_bar, p.state_box, p.input_box)

    def test_shift_refuses_bad_equilibrium(self):
        from kedmd_mpc.systems import EquilibriumSpec

        sys = make_four_tank()
        with pytest.raises(ConfigurationError):
            shift_to_origin(sys, EquilibriumSpec((0.5, 0.5, 0.5, 0.5), (1.0, 1.0)))


def test_make_linear():
    A, B = np.array([[1.0, 0.1], [0.0, 1.0]]), np.array([[0.0], [0.1]])
    sys = make_linear(A, B)
    np.testing.assert_allclose(sys.step([1.0, 2.0], [3.0]), A @ [1, 2] + B @ [3])


def test_unknown_system():
    with pytest.raises(ConfigurationError):
        make_system("pendulum")
