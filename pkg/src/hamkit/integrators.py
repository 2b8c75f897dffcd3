"""Flat-space optimisers: damped leapfrog, gradient-flow baseline, rate fits.

The damped leapfrog is written in the numerically stable half-step form: the
time integral of the damping enters only through Delta_eta over half a step,
so no large exponentials appear.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import KineticMetric, PhasePoint, evaluate_hamiltonian
from .errors import DivergenceError, DomainError, FitDomainError

__all__ = [
    "OptimizerConfig",
    "Trajectory",
    "dissipative_leapfrog_step",
    "gradient_flow_step",
    "run_optimizer",
    "fit_rate",
]

TRAJECTORY_CSV_HEADER = "step,time,value,gap,energy"


@dataclass
class OptimizerConfig:
    """Run parameters for the flat-space optimisers.

    metric='auto' resolves to (step size) * I, the convenient default for
    optimisation runs; explicit metrics are honoured as given.
    """

    step: float
    num_steps: int
    schedule: "DampingSchedule"
    x0: PhasePoint
    metric: object = "auto"
    record_every: int = 1
    divergence_threshold: float = 1e12
    target_gap: float | None = None

    def __post_init__(self):
        if not self.step > 0:
            raise DomainError("step size must be positive")
        if self.num_steps < 1:
            raise DomainError("num_steps must be >= 1")
        if self.record_every < 1:
            raise DomainError("record_every must be >= 1")
        if self.metric == "auto":
            self.metric = KineticMetric.scaled_identity(self.x0.dim, self.step)
        elif not isinstance(self.metric, KineticMetric):
            raise DomainError("metric must be a KineticMetric or 'auto'")
        if self.metric.dim != self.x0.dim:
            raise DomainError("metric dimension does not match initial state")


@dataclass
class Trajectory:
    """Recorded optimisation history at spacing step * record_every."""

    steps: np.ndarray           # iteration indices
    times: np.ndarray
    values: np.ndarray          # f(q_k)
    gaps: np.ndarray | None     # f(q_k) - f_star when the minimum is known
    energies: np.ndarray        # H(q_k, p_k)
    reason: str = "completed"
    states: list | None = None

    def __len__(self):
        return len(self.times)

    def to_csv(self, path_or_file):
        rows = []
        gaps = self.gaps if self.gaps is not None else [math.nan] * len(self)
        for k, t, v, g, e in zip(self.steps, self.times, self.values, gaps,
                                 self.energies):
            rows.append(f"{int(k)},{t:.17e},{v:.17e},{g:.17e},{e:.17e}")
        body = TRAJECTORY_CSV_HEADER + "\n" + "\n".join(rows) + "\n"
        if hasattr(path_or_file, "write"):
            path_or_file.write(body)
        else:
            with open(path_or_file, "w") as fh:
                fh.write(body)
        return body


def dissipative_leapfrog_step(x, t_k, cfg, prob):
    """One damped leapfrog step from (q_k, p_k) at time t_k.

    p_{k+1/2} = exp(-De) (p_k - (dt/2) grad f(q_k))
    q_{k+1}   = q_k + dt cosh(De) g^{-1} p_{k+1/2}
    p_{k+1}   = exp(-De) p_{k+1/2} - (dt/2) grad f(q_{k+1})

    with De the exact damping integral over [t_k, t_k + dt/2].  The position
    update carries a plus sign so the undamped limit is the classical
    leapfrog.
    """
    dt = cfg.step
    de = cfg.schedule.delta_eta(t_k, t_k + 0.5 * dt)
    decay = math.exp(-de)
    ch = math.cosh(de)
    p_half = decay * (x.p - 0.5 * dt * prob.grad(x.q))
    q_new = x.q + dt * ch * cfg.metric.inv_mul(p_half)
    p_new = decay * p_half - 0.5 * dt * prob.grad(q_new)
    if not (np.all(np.isfinite(q_new)) and np.all(np.isfinite(p_new))):
        raise DivergenceError(
            f"non-finite state after step at t={t_k}; step size too large?"
        )
    return PhasePoint(q_new, p_new)


def gradient_flow_step(q, dt, prob):
    """Explicit-Euler gradient descent: q - dt * grad f(q)."""
    q_new = q - dt * prob.grad(q)
    if not np.all(np.isfinite(q_new)):
        raise DivergenceError("non-finite iterate in gradient flow")
    return q_new


_METHODS = ("dissipative_leapfrog", "gradient_flow")


def run_optimizer(cfg, prob, method="dissipative_leapfrog"):
    """Run an optimiser and record a Trajectory.

    Terminates early (with a recorded reason) on divergence of |f| or ||q||
    beyond cfg.divergence_threshold, or when the objective gap drops below
    cfg.target_gap.
    """
    if method not in _METHODS:
        raise DomainError(f"unknown method {method!r}; choose from {_METHODS}")
    t0 = cfg.schedule.start_time()
    x = cfg.x0
    steps, times, values, energies = [0], [t0], [prob.value(x.q)], []
    energies.append(evaluate_hamiltonian(x, cfg.metric, prob)
                    if method == "dissipative_leapfrog" else values[0])
    reason = "completed"
    k_done = 0
    for k in range(1, cfg.num_steps + 1):
        t_k = t0 + (k - 1) * cfg.step
        try:
            if method == "dissipative_leapfrog":
                x = dissipative_leapfrog_step(x, t_k, cfg, prob)
            else:
                x = PhasePoint(gradient_flow_step(x.q, cfg.step, prob), x.p)
        except DivergenceError as exc:
            raise DivergenceError(str(exc), step=k) from None
        k_done = k
        f_k = prob.value(x.q)
        diverged = (abs(f_k) > cfg.divergence_threshold
                    or float(np.linalg.norm(x.q)) > cfg.divergence_threshold)
        reached = (cfg.target_gap is not None and prob.f_star is not None
                   and f_k - prob.f_star < cfg.target_gap)
        if k % cfg.record_every == 0 or k == cfg.num_steps or diverged or reached:
            steps.append(k)
            times.append(t0 + k * cfg.step)
            values.append(f_k)
            energies.append(evaluate_hamiltonian(x, cfg.metric, prob)
                            if method == "dissipative_leapfrog" else f_k)
        if diverged:
            reason = "diverged"
            break
        if reached:
            reason = "target_reached"
            break

    values = np.asarray(values)
    gaps = values - prob.f_star if prob.f_star is not None else None
    return Trajectory(
        steps=np.asarray(steps),
        times=np.asarray(times),
        values=values,
        gaps=gaps,
        energies=np.asarray(energies),
        reason=reason,
        states=[x],
    )


def fit_rate(traj, model="power_law", burn_in=0.2):
    """Least-squares rate fit on the recorded gaps.

    power_law:   slope of log(gap) vs log(t)  -> returns (exponent, r2)
    exponential: slope of log(gap) vs t       -> returns (rate, r2), rate > 0
                 for decaying gaps

    The first `burn_in` fraction of recorded points is excluded.
    """
    if model not in ("power_law", "exponential"):
        raise DomainError(f"unknown fit model {model!r}")
    if traj.gaps is None:
        raise FitDomainError("trajectory has no gaps (unknown minimum)")
    if not 0.0 <= burn_in < 1.0:
        raise DomainError("burn_in fraction must lie in [0, 1)")
    n = len(traj)
    start = int(math.floor(burn_in * n))
    t = np.asarray(traj.times, float)[start:]
    gaps = np.asarray(traj.gaps, float)[start:]
    if len(gaps) < 10:
        raise FitDomainError(
            f"need >= 10 recorded points in the window, got {len(gaps)}"
        )
    if np.any(gaps <= 0.0):
        raise FitDomainError(
            "non-positive gap inside the fitting window; shrink the window"
        )
    y = np.log(gaps)
    xv = np.log(t) if model == "power_law" else t
    slope, intercept = np.polyfit(xv, y, 1)
    resid = y - (slope * xv + intercept)
    ss_res = float(resid @ resid)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    if model == "power_law":
        return float(slope), r2
    return float(-slope), r2
