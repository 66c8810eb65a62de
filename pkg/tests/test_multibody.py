import numpy as np
import pytest

from clfqp.multibody import (
    DynamicsTerms,
    IllConditioned,
    RobotState,
    bias_terms,
    forward_dynamics,
    gravitational_potential,
    h_vector,
    mass_matrix,
    solve_inertia,
    total_energy,
)

from oracles import christoffel_coriolis, fd_gradient, two_link_mass_matrix
from toys import ball_chain, pendulum, rk4_rollout, two_link, two_link_params


class TestMassMatrix:
    def test_point_mass_pendulum(self):
        model = pendulum(length=1.0, mass=1.0)
        assert np.allclose(mass_matrix(model, np.zeros(1)), [[1.0]], atol=1e-14)

    def test_two_link_matches_textbook(self):
        model = two_link()
        p = two_link_params()
        rng = np.random.default_rng(0)
        for _ in range(20):
            q = rng.uniform(-np.pi, np.pi, 2)
            expected = two_link_mass_matrix(q2=q[1], **p)
            assert np.allclose(mass_matrix(model, q), expected, atol=1e-12)

    def test_symmetry(self):
        model = ball_chain()
        rng = np.random.default_rng(1)
        for _ in range(10):
            m = mass_matrix(model, rng.uniform(-1.0, 1.0, model.n))
            assert np.max(np.abs(m - m.T)) < 1e-12

    def test_positive_definite(self):
        rng = np.random.default_rng(2)
        for model in (two_link(), ball_chain()):
            for _ in range(10):
                m = mass_matrix(model, rng.uniform(-1.0, 1.0, model.n))
                assert np.linalg.eigvalsh(m)[0] > 0.0


class TestBiasTerms:
    def test_gravity_zero_when_hanging(self):
        model = pendulum()
        terms = bias_terms(model, model.rest_state())
        assert np.allclose(terms.g_vec, [0.0], atol=1e-14)

    def test_gravity_horizontal_pendulum(self):
        model = pendulum(length=1.0, mass=1.0)
        state = RobotState(q=np.array([np.pi / 2]), dq=np.zeros(1))
        assert np.allclose(bias_terms(model, state).g_vec, [9.81], atol=1e-12)

    def test_no_velocity_no_coriolis_no_damping(self):
        model = two_link(d_s=(0.3, 0.3))
        state = RobotState(q=np.array([0.4, -0.7]), dq=np.zeros(2))
        terms = bias_terms(model, state)
        assert np.allclose(terms.c_vec, 0.0, atol=1e-14)
        assert np.allclose(terms.d_vec, 0.0, atol=1e-14)

    def test_coriolis_matches_christoffel_oracle(self):
        model = two_link()
        rng = np.random.default_rng(3)
        for _ in range(10):
            q = rng.uniform(-1.5, 1.5, 2)
            dq = rng.uniform(-2.0, 2.0, 2)
            c_mat = christoffel_coriolis(lambda qq: mass_matrix(model, qq), q, dq)
            terms = bias_terms(model, RobotState(q, dq))
            assert np.allclose(terms.c_vec, c_mat @ dq, atol=1e-7)

    def test_gravity_is_potential_gradient(self):
        rng = np.random.default_rng(4)
        for model in (two_link(), ball_chain()):
            for _ in range(5):
                q = rng.uniform(-1.0, 1.0, model.n)
                g = bias_terms(model, RobotState(q, np.zeros(model.n))).g_vec
                g_fd = fd_gradient(lambda qq: gravitational_potential(model, qq), q)
                assert np.allclose(g, g_fd, rtol=1e-5, atol=1e-8)

    def test_stiffness_and_damping_are_diagonal_restoring_forces(self):
        model = pendulum(k_s=2.0, d_s=0.5, gravity=(0.0, 0.0, 0.0))
        terms = bias_terms(model, RobotState(np.array([0.5]), np.array([1.2])))
        assert np.allclose(terms.k_vec, [1.0], atol=1e-14)
        assert np.allclose(terms.d_vec, [0.6], atol=1e-14)


class TestPassivity:
    def test_mdot_minus_2c_is_skew(self):
        model = two_link()
        rng = np.random.default_rng(5)
        for _ in range(100):
            q = rng.uniform(-np.pi, np.pi, 2)
            dq = rng.uniform(-2.0, 2.0, 2)
            c_mat = christoffel_coriolis(lambda qq: mass_matrix(model, qq), q, dq)
            h = 1e-6
            m_dot = np.zeros((2, 2))
            for k in range(2):
                dqk = np.zeros(2)
                dqk[k] = h
                m_dot += (mass_matrix(model, q + dqk) - mass_matrix(model, q - dqk)) \
                    / (2.0 * h) * dq[k]
            assert abs(dq @ (m_dot - 2.0 * c_mat) @ dq) < 1e-8


class TestHVector:
    def test_zero_at_rest_without_potentials(self):
        model = two_link(gravity=(0.0, 0.0, 0.0))
        assert np.allclose(h_vector(model, model.rest_state()), 0.0, atol=1e-14)

    def test_pure_stiffness(self):
        model = pendulum(k_s=2.0, gravity=(0.0, 0.0, 0.0))
        state = RobotState(np.array([0.5]), np.zeros(1))
        assert np.allclose(h_vector(model, state), [1.0], atol=1e-14)

    def test_sums_components(self):
        model = two_link(k_s=(0.5, 0.2), d_s=(0.1, 0.3))
        rng = np.random.default_rng(6)
        for _ in range(50):
            state = RobotState(rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2))
            terms = bias_terms(model, state)
            expected = terms.c_vec + terms.d_vec + terms.k_vec + terms.g_vec
            assert np.array_equal(h_vector(model, state), expected)


class TestForwardDynamics:
    def test_zero_everything(self):
        model = two_link(gravity=(0.0, 0.0, 0.0))
        qdd = forward_dynamics(model, model.rest_state(), np.zeros(2))
        assert np.allclose(qdd, 0.0, atol=1e-14)

    def test_scalar_algebra_pendulum(self):
        model = pendulum(gravity=(0.0, 0.0, 0.0))
        qdd = forward_dynamics(model, model.rest_state(), np.array([2.0]))
        assert np.allclose(qdd, [2.0], atol=1e-12)

    def test_residual_random_states(self):
        rng = np.random.default_rng(7)
        for model in (two_link(k_s=(0.5, 0.5), d_s=(0.1, 0.1)), ball_chain()):
            for _ in range(10):
                state = RobotState(rng.uniform(-1, 1, model.n), rng.uniform(-1, 1, model.n))
                u = rng.uniform(-1, 1, model.m)
                terms = bias_terms(model, state)
                qdd = forward_dynamics(model, state, u, terms=terms)
                resid = terms.M @ qdd + terms.h - model.B @ u
                assert np.max(np.abs(resid)) < 1e-10

    def test_ill_conditioned_raises(self):
        with pytest.raises(IllConditioned):
            solve_inertia(np.diag([1.0, 1e-14]), np.ones(2))


class TestEnergy:
    def test_conservation_undamped_two_link(self):
        model = two_link(k_s=(0.8, 0.5))
        q0 = np.array([0.6, -0.4])
        e0 = total_energy(model, RobotState(q0, np.zeros(2)))
        qs, dqs = rk4_rollout(model, q0, np.zeros(2),
                              lambda t, q, dq: np.zeros(2), dt=1e-4, steps=5000)
        e1 = total_energy(model, RobotState(qs[-1], dqs[-1]))
        assert abs(e1 - e0) < 1e-3 * abs(e0)

    def test_conservation_ball_chain(self):
        model = ball_chain(d_s=0.0)
        q0 = 0.3 * np.ones(model.n)
        e0 = total_energy(model, RobotState(q0, np.zeros(model.n)))
        qs, dqs = rk4_rollout(model, q0, np.zeros(model.n),
                              lambda t, q, dq: np.zeros(3), dt=1e-4, steps=2000)
        e1 = total_energy(model, RobotState(qs[-1], dqs[-1]))
        assert abs(e1 - e0) < 1e-3 * max(abs(e0), 1e-9)


class TestTypes:
    def test_state_rejects_nan(self):
        with pytest.raises(ValueError):
            RobotState(q=np.array([np.nan]), dq=np.zeros(1))

    def test_dynamics_terms_h_property(self):
        terms = DynamicsTerms(M=np.eye(1), c_vec=np.array([1.0]), d_vec=np.array([2.0]),
                              k_vec=np.array([3.0]), g_vec=np.array([4.0]))
        assert terms.h == pytest.approx(10.0)

    def test_model_validation_catches_bad_bounds(self):
        with pytest.raises(ValueError):
            two_link(u_lim=-1.0)
