import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from hamkit import (
    DampingSchedule,
    DomainError,
    KineticMetric,
    NumericOverflowError,
    PhasePoint,
    Problem,
    conformal_vector_field,
    delta_eta,
    dissipation_rate,
    evaluate_hamiltonian,
    problems,
)


class TestPhasePoint:
    def test_basic(self):
        x = PhasePoint([1.0, 2.0], [3.0, 4.0])
        assert x.dim == 2
        y = x.flip_momentum()
        assert np.array_equal(y.q, x.q)
        assert np.array_equal(y.p, -x.p)

    def test_length_mismatch(self):
        with pytest.raises(DomainError):
            PhasePoint([1.0], [1.0, 2.0])

    def test_nonfinite_rejected(self):
        with pytest.raises(DomainError):
            PhasePoint([np.nan], [0.0])
        with pytest.raises(DomainError):
            PhasePoint([0.0], [np.inf])

    def test_immutable(self):
        x = PhasePoint([1.0], [2.0])
        with pytest.raises(ValueError):
            x.q[0] = 5.0


class TestKineticMetric:
    def test_symmetry_and_inverse(self):
        g = KineticMetric([[2.0, 0.5], [0.5, 1.0]])
        assert np.max(np.abs(g.g - g.g.T)) == 0.0
        assert np.max(np.abs(g.g @ g.g_inv - np.eye(2))) <= 1e-10

    def test_not_pd_rejected(self):
        with pytest.raises(DomainError):
            KineticMetric([[1.0, 2.0], [2.0, 1.0]])  # eigenvalues 3, -1

    def test_scaled_identity(self):
        g = KineticMetric.scaled_identity(3, 0.1)
        assert np.allclose(g.g, 0.1 * np.eye(3))
        assert np.allclose(g.inv_mul(np.ones(3)), 10.0 * np.ones(3))
        with pytest.raises(DomainError):
            KineticMetric.scaled_identity(3, -1.0)

    def test_quad_inv(self):
        g = KineticMetric.identity(2)
        assert g.quad_inv(np.array([3.0, 4.0])) == pytest.approx(25.0)

    def test_momentum_sampling_covariance(self):
        rng = np.random.default_rng(0)
        g = KineticMetric([[2.0, 0.3], [0.3, 1.0]])
        draws = np.array([g.sample_momentum(rng) for _ in range(20000)])
        cov = np.cov(draws.T)
        assert np.max(np.abs(cov - g.g)) < 0.05


class TestDampingSchedule:
    def test_delta_eta_constant(self):
        s = DampingSchedule.constant(1.0)
        assert s.delta_eta(0.0, 0.1) == pytest.approx(0.1, abs=1e-15)

    def test_delta_eta_vanishing(self):
        s = DampingSchedule.vanishing(r=3.0)
        assert s.delta_eta(1.0, 2.0) == pytest.approx(3.0 * math.log(2.0))

    def test_delta_eta_zero(self):
        s = DampingSchedule.zero()
        assert s.delta_eta(0.0, 123.0) == 0.0
        assert s.gamma_at(5.0) == 0.0

    def test_vanishing_domain(self):
        s = DampingSchedule.vanishing(r=3.0, t0=1.0)
        with pytest.raises(DomainError):
            s.gamma_at(0.5)
        with pytest.raises(DomainError):
            s.delta_eta(0.5, 2.0)

    def test_reversed_interval(self):
        with pytest.raises(DomainError):
            DampingSchedule.constant(1.0).delta_eta(2.0, 1.0)

    def test_invalid_parameters(self):
        with pytest.raises(DomainError):
            DampingSchedule.constant(0.0)
        with pytest.raises(DomainError):
            DampingSchedule.vanishing(r=-1.0)

    def test_module_level_helper(self):
        s = DampingSchedule.constant(2.0)
        assert delta_eta(s, 1.0, 1.5) == pytest.approx(1.0)

    @given(st.floats(1.0, 50.0), st.floats(0.0, 10.0), st.floats(0.0, 10.0))
    @settings(max_examples=50, deadline=None)
    def test_additivity(self, a, d1, d2):
        b, c = a + d1, a + d1 + d2
        for s in (DampingSchedule.constant(0.7),
                  DampingSchedule.vanishing(3.0, t0=1.0),
                  DampingSchedule.zero()):
            lhs = s.delta_eta(a, b) + s.delta_eta(b, c)
            assert lhs == pytest.approx(s.delta_eta(a, c), abs=1e-12)


class TestEvaluateHamiltonian:
    def test_origin(self):
        prob = problems.quadratic(2)
        x = PhasePoint(np.zeros(2), np.zeros(2))
        assert evaluate_hamiltonian(x, KineticMetric.identity(2), prob) == 0.0

    def test_scalar(self):
        prob = problems.quadratic(1)
        x = PhasePoint([1.0], [2.0])
        assert evaluate_hamiltonian(x, KineticMetric.identity(1), prob) == pytest.approx(2.5)

    def test_scaled_metric(self):
        prob = problems.quadratic(2)
        x = PhasePoint([1.0, 1.0], [1.0, 0.0])
        g = KineticMetric.scaled_identity(2, 2.0)
        assert evaluate_hamiltonian(x, g, prob) == pytest.approx(1.25)

    def test_overflow_names_term(self):
        bad = Problem(1, value=lambda q: math.inf, grad=lambda q: q)
        x = PhasePoint([1.0], [1.0])
        with pytest.raises(NumericOverflowError, match="potential"):
            evaluate_hamiltonian(x, KineticMetric.identity(1), bad)

    def test_dimension_mismatch(self):
        prob = problems.quadratic(2)
        with pytest.raises(DomainError):
            evaluate_hamiltonian(PhasePoint([1.0], [1.0]),
                                 KineticMetric.identity(1), prob)


class TestConformalField:
    def test_rest_point(self):
        prob = problems.quadratic(1)
        dq, dp = conformal_vector_field(
            PhasePoint([1.0], [0.0]), 1.0, KineticMetric.identity(1), prob,
            DampingSchedule.constant(1.0))
        assert dq == pytest.approx(0.0)
        assert dp == pytest.approx(-1.0)

    def test_moving_point(self):
        prob = problems.quadratic(1)
        dq, dp = conformal_vector_field(
            PhasePoint([0.0], [1.0]), 1.0, KineticMetric.identity(1), prob,
            DampingSchedule.constant(2.0))
        assert dq == pytest.approx(1.0)
        assert dp == pytest.approx(-2.0)

    def test_zero_damping_is_conservative(self):
        prob = problems.quadratic(2)
        g = KineticMetric.identity(2)
        x = PhasePoint([0.3, -0.7], [1.1, 0.2])
        dq, dp = conformal_vector_field(x, 1.0, g, prob, DampingSchedule.zero())
        assert np.array_equal(dq, g.inv_mul(x.p))
        assert np.array_equal(dp, -prob.grad(x.q))

    def test_conservative_energy_oracle(self):
        # reference integration with zero damping keeps H constant to 1e-8
        prob = problems.quadratic(2, mu=1.7)
        g = KineticMetric([[1.5, 0.2], [0.2, 1.0]])
        sched = DampingSchedule.zero()

        def rhs(t, z):
            x = PhasePoint(z[:2], z[2:])
            dq, dp = conformal_vector_field(x, t, g, prob, sched)
            return np.concatenate([dq, dp])

        z0 = np.array([1.0, -0.5, 0.3, 0.8])
        sol = solve_ivp(rhs, [0.0, 1.0], z0, rtol=1e-11, atol=1e-12)
        h0 = evaluate_hamiltonian(PhasePoint(z0[:2], z0[2:]), g, prob)
        h1 = evaluate_hamiltonian(PhasePoint(sol.y[:2, -1], sol.y[2:, -1]), g, prob)
        assert abs(h1 - h0) < 1e-8

    def test_conservative_field_orthogonal_to_energy_gradient(self):
        prob = problems.quadratic(3, mu=0.9)
        g = KineticMetric.identity(3)
        rng = np.random.default_rng(1)
        for _ in range(20):
            x = PhasePoint(rng.standard_normal(3), rng.standard_normal(3))
            dq, dp = conformal_vector_field(x, 1.0, g, prob,
                                            DampingSchedule.zero())
            deriv = prob.grad(x.q) @ dq + g.inv_mul(x.p) @ dp
            assert abs(deriv) < 1e-12


class TestDissipationRate:
    def test_values(self):
        g = KineticMetric.identity(2)
        x = PhasePoint([0.0, 0.0], [1.0, 1.0])
        assert dissipation_rate(x, 1.0, g, DampingSchedule.constant(0.5)) == pytest.approx(-1.0)
        x0 = PhasePoint([1.0, 1.0], [0.0, 0.0])
        assert dissipation_rate(x0, 1.0, g, DampingSchedule.constant(3.0)) == 0.0
        assert dissipation_rate(x, 1.0, g, DampingSchedule.zero()) == 0.0

    def test_matches_energy_derivative_along_flow(self):
        prob = problems.quadratic(1)
        g = KineticMetric.identity(1)
        sched = DampingSchedule.constant(0.8)

        def rhs(t, z):
            x = PhasePoint(z[:1], z[1:])
            dq, dp = conformal_vector_field(x, t, g, prob, sched)
            return np.concatenate([dq, dp])

        z0 = np.array([1.0, 0.5])
        h = 1e-4
        sol = solve_ivp(rhs, [1.0, 1.0 + 2 * h], z0, rtol=1e-12, atol=1e-13,
                        dense_output=True)
        energy = lambda t: evaluate_hamiltonian(
            PhasePoint(sol.sol(t)[:1], sol.sol(t)[1:]), g, prob)
        fd = (energy(1.0 + 2 * h) - energy(1.0)) / (2 * h)
        rate = dissipation_rate(PhasePoint(sol.sol(1.0 + h)[:1],
                                           sol.sol(1.0 + h)[1:]),
                                1.0 + h, g, sched)
        assert fd == pytest.approx(rate, abs=1e-6)


class TestProblems:
    @pytest.mark.parametrize("prob", [
        problems.quadratic(3, 1.3),
        problems.quartic(2),
        problems.rosenbrock(),
        problems.gaussian_mixture_1d(),
        problems.banana(),
        problems.standard_gaussian(4),
    ], ids=lambda p: p.name)
    def test_grad_matches_finite_differences(self, prob):
        rng = np.random.default_rng(42)
        for _ in range(10):
            q = rng.standard_normal(prob.dim)
            fd = Problem.with_fd_gradient(prob.dim, prob.value).grad(q)
            grad = prob.grad(q)
            scale = max(np.linalg.norm(grad), 1.0)
            assert np.max(np.abs(grad - fd)) / scale < 1e-5

    def test_certified_minima(self):
        for prob in (problems.quadratic(2), problems.quartic(3),
                     problems.rosenbrock()):
            assert prob.value(prob.q_star) == pytest.approx(prob.f_star, abs=1e-12)
            assert np.max(np.abs(prob.grad(prob.q_star))) < 1e-10

    def test_gap_requires_minimum(self):
        with pytest.raises(DomainError):
            problems.gaussian_mixture_1d().gap(np.array([0.0]))

    def test_fd_gradient_flagged(self):
        prob = Problem.with_fd_gradient(1, lambda q: float(q @ q))
        assert prob.grad_is_fd
        assert not problems.quadratic(1).grad_is_fd
