import io
import math

import numpy as np
import pytest

from hamkit import (
    DampingSchedule,
    DivergenceError,
    DomainError,
    FitDomainError,
    KineticMetric,
    OptimizerConfig,
    PhasePoint,
    Trajectory,
    dissipative_leapfrog_step,
    evaluate_hamiltonian,
    fit_rate,
    gradient_flow_step,
    problems,
    run_optimizer,
)


def make_cfg(prob, step, num_steps, schedule, q0, p0=None, metric="auto", **kw):
    p0 = np.zeros_like(np.atleast_1d(q0)) if p0 is None else p0
    return OptimizerConfig(step=step, num_steps=num_steps, schedule=schedule,
                           x0=PhasePoint(q0, p0), metric=metric, **kw)


class TestStepExamples:
    def test_free_drift(self):
        prob = problems.constant(1)
        cfg = make_cfg(prob, 1.0, 1, DampingSchedule.zero(), np.array([0.0]),
                       np.array([1.0]), metric=KineticMetric.identity(1))
        y = dissipative_leapfrog_step(cfg.x0, 0.0, cfg, prob)
        assert y.q == pytest.approx(1.0)
        assert y.p == pytest.approx(1.0)

    def test_harmonic_small_step(self):
        prob = problems.quadratic(1)
        cfg = make_cfg(prob, 0.1, 1, DampingSchedule.zero(), np.array([1.0]),
                       np.array([0.0]), metric=KineticMetric.identity(1))
        y = dissipative_leapfrog_step(cfg.x0, 0.0, cfg, prob)
        assert y.q == pytest.approx(0.995, abs=1e-12)
        assert y.p == pytest.approx(-0.09975, abs=1e-12)

    def test_damped_free_drift(self):
        # constant gamma with Delta_eta = ln 2 over the half step
        prob = problems.constant(1)
        gamma = 2.0 * math.log(2.0)  # gamma * (dt/2) = ln 2 at dt = 1
        cfg = make_cfg(prob, 1.0, 1, DampingSchedule.constant(gamma),
                       np.array([0.0]), np.array([1.0]),
                       metric=KineticMetric.identity(1))
        y = dissipative_leapfrog_step(cfg.x0, 0.0, cfg, prob)
        assert y.q == pytest.approx(0.625, abs=1e-12)   # cosh(ln2) = 1.25
        assert y.p == pytest.approx(0.25, abs=1e-12)

    def test_zero_damping_is_classical_leapfrog(self):
        prob = problems.quadratic(2, 1.3)
        g = KineticMetric([[1.2, 0.1], [0.1, 0.9]])
        cfg = make_cfg(prob, 0.07, 1, DampingSchedule.zero(),
                       np.array([0.4, -0.2]), np.array([0.9, 0.3]), metric=g)
        y = dissipative_leapfrog_step(cfg.x0, 0.0, cfg, prob)
        # classical kick-drift-kick by hand
        p_half = cfg.x0.p - 0.5 * 0.07 * prob.grad(cfg.x0.q)
        q_new = cfg.x0.q + 0.07 * g.inv_mul(p_half)
        p_new = p_half - 0.5 * 0.07 * prob.grad(q_new)
        assert np.array_equal(y.q, q_new)
        assert np.array_equal(y.p, p_new)


class TestGradientFlow:
    def test_single_step(self):
        prob = problems.quadratic(1)
        assert gradient_flow_step(np.array([1.0]), 0.1, prob) == pytest.approx(0.9)

    def test_fixed_point(self):
        prob = problems.quadratic(2)
        q = np.zeros(2)
        assert np.array_equal(gradient_flow_step(q, 0.3, prob), q)

    def test_unstable_step_diverges(self):
        prob = problems.quadratic(1)
        cfg = make_cfg(prob, 2.5, 100, DampingSchedule.zero(), np.array([1.0]))
        traj = run_optimizer(cfg, prob, method="gradient_flow")
        assert traj.reason == "diverged"
        assert traj.steps[-1] <= 50


class TestRunOptimizer:
    def test_strongly_convex_constant_damping(self):
        prob = problems.quadratic(1)
        cfg = make_cfg(prob, 0.1, 2000, DampingSchedule.constant(1.0),
                       np.array([5.0]))
        traj = run_optimizer(cfg, prob)
        assert traj.reason == "completed"
        assert traj.gaps[-1] < 1e-10

    def test_constant_objective(self):
        prob = problems.constant(3, c=2.0)
        cfg = make_cfg(prob, 0.1, 50, DampingSchedule.constant(1.0),
                       np.ones(3))
        traj = run_optimizer(cfg, prob)
        assert np.all(traj.gaps == 0.0)

    def test_zero_steps_rejected(self):
        with pytest.raises(DomainError):
            make_cfg(problems.quadratic(1), 0.1, 0, DampingSchedule.zero(),
                     np.array([1.0]))

    def test_bad_method(self):
        prob = problems.quadratic(1)
        cfg = make_cfg(prob, 0.1, 10, DampingSchedule.zero(), np.array([1.0]))
        with pytest.raises(DomainError):
            run_optimizer(cfg, prob, method="newton")

    def test_recording_length_and_spacing(self):
        prob = problems.quadratic(2)
        cfg = make_cfg(prob, 0.1, 10, DampingSchedule.zero(), np.ones(2),
                       record_every=3)
        traj = run_optimizer(cfg, prob)
        assert len(traj) == math.ceil(10 / 3) + 1
        # interior spacing is dt * record_every
        assert np.allclose(np.diff(traj.times[:-1]), 0.3)
        assert np.all(traj.gaps >= -1e-12)

    def test_target_gap_termination(self):
        prob = problems.quadratic(1)
        cfg = make_cfg(prob, 0.1, 5000, DampingSchedule.constant(1.0),
                       np.array([5.0]), target_gap=1e-6)
        traj = run_optimizer(cfg, prob)
        assert traj.reason == "target_reached"
        assert traj.gaps[-1] < 1e-6
        assert traj.steps[-1] < 5000

    def test_lyapunov_descent(self):
        prob = problems.quadratic(2, mu=2.0)
        cfg = make_cfg(prob, 0.05, 500, DampingSchedule.constant(2.0),
                       np.array([3.0, -1.0]))
        traj = run_optimizer(cfg, prob)
        energies = traj.energies[10:]
        assert np.all(np.diff(energies) <= 1e-9)

    def test_overdamped_limit_approaches_gradient_flow(self):
        prob = problems.quadratic(2, mu=1.0)
        dt = 0.05
        deviations = []
        for gamma in (1e2, 1e3):
            cfg = make_cfg(prob, dt, 200, DampingSchedule.constant(gamma),
                           np.array([2.0, -1.0]))
            traj = run_optimizer(cfg, prob)
            # overdamped limit: first step dt/4 (momentum starts at zero),
            # every later step an effective gradient step of dt/2
            q = np.array([2.0, -1.0])
            dev, first = 0.0, True
            for v in traj.values[1:]:
                q = gradient_flow_step(q, dt / 4.0 if first else dt / 2.0, prob)
                first = False
                dev = max(dev, abs(prob.value(q) - v))
            deviations.append(dev)
        assert deviations[1] < deviations[0]
        assert deviations[1] < 1e-12

    def test_divergence_reason_recorded(self):
        prob = problems.quadratic(1)
        cfg = make_cfg(prob, 10.0, 2000, DampingSchedule.zero(),
                       np.array([1.0]))
        traj = run_optimizer(cfg, prob)
        assert traj.reason == "diverged"
        assert abs(traj.values[-1]) > cfg.divergence_threshold

    def test_divergence_error_carries_step(self):
        prob = problems.quadratic(1)
        cfg = make_cfg(prob, 10.0, 2000, DampingSchedule.zero(),
                       np.array([1.0]), divergence_threshold=math.inf,
                       record_every=1000)
        with np.errstate(over="ignore"), pytest.raises(DivergenceError) as exc_info:
            run_optimizer(cfg, prob)
        assert exc_info.value.step is not None

    def test_time_reversibility(self):
        prob = problems.quadratic(2, 1.3)
        cfg = make_cfg(prob, 0.1, 1, DampingSchedule.zero(),
                       np.array([0.7, -0.4]), np.array([0.2, 1.1]),
                       metric=KineticMetric.identity(2))
        x0 = cfg.x0
        x = x0
        for _ in range(40):
            x = dissipative_leapfrog_step(x, 0.0, cfg, prob)
        x = x.flip_momentum()
        for _ in range(40):
            x = dissipative_leapfrog_step(x, 0.0, cfg, prob)
        x = x.flip_momentum()
        assert np.max(np.abs(x.q - x0.q)) < 1e-9
        assert np.max(np.abs(x.p - x0.p)) < 1e-9


class TestFitRate:
    def test_exact_power_law(self):
        t = np.linspace(1.0, 100.0, 100)
        gaps = t ** -2.0
        traj = Trajectory(np.arange(100), t, gaps, gaps, np.zeros(100))
        slope, r2 = fit_rate(traj, "power_law", burn_in=0.0)
        assert slope == pytest.approx(-2.0, abs=1e-9)
        assert r2 == pytest.approx(1.0, abs=1e-12)

    def test_exact_exponential(self):
        t = np.linspace(0.0, 10.0, 100)
        gaps = np.exp(-3.0 * t)
        traj = Trajectory(np.arange(100), t, gaps, gaps, np.zeros(100))
        rate, r2 = fit_rate(traj, "exponential", burn_in=0.0)
        assert rate == pytest.approx(3.0, abs=1e-9)
        assert r2 == pytest.approx(1.0, abs=1e-12)

    def test_too_few_points(self):
        t = np.linspace(1.0, 2.0, 5)
        traj = Trajectory(np.arange(5), t, t, t, np.zeros(5))
        with pytest.raises(FitDomainError):
            fit_rate(traj, "power_law")

    def test_nonpositive_gap(self):
        t = np.linspace(1.0, 2.0, 20)
        gaps = np.linspace(1.0, -0.1, 20)
        traj = Trajectory(np.arange(20), t, gaps, gaps, np.zeros(20))
        with pytest.raises(FitDomainError):
            fit_rate(traj, "power_law", burn_in=0.0)

    def test_missing_gaps(self):
        t = np.linspace(1.0, 2.0, 20)
        traj = Trajectory(np.arange(20), t, t, None, np.zeros(20))
        with pytest.raises(FitDomainError):
            fit_rate(traj)


class TestTrajectoryCsv:
    def test_format_and_determinism(self):
        prob = problems.quadratic(1)
        cfg = make_cfg(prob, 0.1, 20, DampingSchedule.constant(1.0),
                       np.array([2.0]))
        bodies = []
        for _ in range(2):
            traj = run_optimizer(cfg, prob)
            buf = io.StringIO()
            traj.to_csv(buf)
            bodies.append(buf.getvalue())
        assert bodies[0] == bodies[1]
        lines = bodies[0].strip().split("\n")
        assert lines[0] == "step,time,value,gap,energy"
        assert len(lines) == len(traj) + 1
        first = lines[1].split(",")
        assert len(first) == 5
        # full round-trip precision
        assert float(first[2]) == traj.values[0]
