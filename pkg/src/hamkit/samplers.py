"""Samplers: HMC with Metropolis correction, Langevin steppers, recipe drift."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import KineticMetric, PhasePoint, evaluate_hamiltonian
from .errors import DivergenceError, DomainError
from .integrators import gradient_flow_step

__all__ = [
    "RngStream",
    "ChainState",
    "DiffusionSpec",
    "hmc_draw",
    "leapfrog_trajectory",
    "three_stage_trajectory",
    "THREE_STAGE_A",
    "THREE_STAGE_B",
    "underdamped_step",
    "overdamped_em_step",
    "complete_recipe_drift",
    "mcmc_estimate",
    "run_hmc_chain",
    "write_samples_csv",
]

# Minimum-error three-stage weights (standard values; user-overridable).
THREE_STAGE_A = 0.29619504261126
THREE_STAGE_B = 0.11888010966548


class RngStream:
    """Seedable random stream (PCG64 behind a numpy Generator).

    Identical seeds give identical draw sequences within one build; derived
    streams come from SeedSequence.spawn and never share state.
    """

    def __init__(self, seed, _seq=None):
        self.seed = int(seed)
        self._seq = _seq if _seq is not None else np.random.SeedSequence(self.seed)
        self._gen = np.random.Generator(np.random.PCG64(self._seq))
        self.counter = 0

    def split(self, n):
        return [RngStream(self.seed, _seq=child) for child in self._seq.spawn(n)]

    def standard_normal(self, size=None):
        self.counter += 1
        return self._gen.standard_normal(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        self.counter += 1
        return self._gen.uniform(low, high, size)

    def integers(self, low, high):
        """Uniform integer in the closed range [low, high]."""
        self.counter += 1
        return int(self._gen.integers(low, high + 1))


@dataclass(frozen=True)
class ChainState:
    """Current MCMC state plus acceptance and moment bookkeeping."""

    x: PhasePoint
    steps: int = 0
    accepted: int = 0
    incidents: int = 0          # non-finite energy differences seen
    sum_q: np.ndarray = None
    sum_q2: np.ndarray = None

    def __post_init__(self):
        if self.sum_q is None:
            object.__setattr__(self, "sum_q", np.zeros(self.x.dim))
        if self.sum_q2 is None:
            object.__setattr__(self, "sum_q2", np.zeros(self.x.dim))
        if self.accepted > self.steps:
            raise DomainError("acceptance tally cannot exceed step count")

    @classmethod
    def start(cls, q):
        q = np.atleast_1d(np.asarray(q, float))
        return cls(PhasePoint(q, np.zeros_like(q)))

    @property
    def acceptance_rate(self):
        return self.accepted / self.steps if self.steps else 0.0

    def mean(self):
        return self.sum_q / max(self.steps, 1)

    def second_moment(self):
        return self.sum_q2 / max(self.steps, 1)


def leapfrog_trajectory(x, prob, g, dt, L):
    """L leapfrog steps (half kick / full drift / half kick) for
    H = (1/2) p^T g^{-1} p + V(q)."""
    if L < 1:
        raise DomainError("L must be >= 1")
    q = np.array(x.q)
    p = x.p - 0.5 * dt * prob.grad(q)
    for i in range(L):
        q = q + dt * g.inv_mul(p)
        if not np.all(np.isfinite(q)):
            raise DivergenceError("leapfrog position diverged", step=i)
        if i < L - 1:
            p = p - dt * prob.grad(q)
    p = p - 0.5 * dt * prob.grad(q)
    if not np.all(np.isfinite(p)):
        raise DivergenceError("leapfrog momentum diverged", step=L - 1)
    return PhasePoint(q, p)


def three_stage_trajectory(x, prob, g, dt, L, a=THREE_STAGE_A, b=THREE_STAGE_B):
    """L steps of the palindromic three-stage geodesic composition.

    Per step: drift(b) kick(a) drift(1/2-b) kick(1-2a) drift(1/2-b) kick(a)
    drift(b), each weight scaled by dt; drift weights sum to 1, kick weights
    sum to 1, so V == 0 yields a pure drift of total length dt*L.
    """
    if L < 1:
        raise DomainError("L must be >= 1")
    q = np.array(x.q)
    p = np.array(x.p)
    drifts = (b, 0.5 - b, 0.5 - b, b)
    kicks = (a, 1.0 - 2.0 * a, a)
    for i in range(L):
        for j in range(3):
            q = q + drifts[j] * dt * g.inv_mul(p)
            p = p - kicks[j] * dt * prob.grad(q)
        q = q + drifts[3] * dt * g.inv_mul(p)
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            raise DivergenceError("three-stage trajectory diverged", step=i)
    return PhasePoint(q, p)


def hmc_draw(chain, prob, g, dt, L, rng, jitter=0.0):
    """One HMC transition: momentum refresh, leapfrog flight, Metropolis test.

    The refreshed momentum is p ~ N(0, g) (equivalently velocity g^{-1} p ~
    N(0, g^{-1})), drawn through the cached Cholesky factor.  With jitter in
    (0, 1] the number of leapfrog steps is uniform on
    [ceil((1-jitter) L), L].  A non-finite energy difference counts as a
    rejection and increments the incident counter.  On rejection the stored
    state keeps the position with the refreshed momentum flipped.
    """
    if not 0.0 <= jitter <= 1.0:
        raise DomainError("jitter must lie in [0, 1]")
    q = chain.x.q
    p = g.sample_momentum(rng)
    z0 = PhasePoint(q, p)
    l_min = max(1, math.ceil((1.0 - jitter) * L))
    l_run = rng.integers(l_min, L) if l_min < L else L
    incidents = 0
    try:
        z_prop = leapfrog_trajectory(z0, prob, g, dt, l_run)
        d_h = (evaluate_hamiltonian(z_prop, g, prob)
               - evaluate_hamiltonian(z0, g, prob))
    except (DivergenceError, ArithmeticError):
        z_prop, d_h = None, math.inf
    if not math.isfinite(d_h):
        incidents = 1
        d_h = math.inf
    u = rng.uniform()
    accept = d_h <= 0.0 or u < math.exp(-d_h)
    new_x = z_prop if accept else z0.flip_momentum()
    return ChainState(
        x=new_x,
        steps=chain.steps + 1,
        accepted=chain.accepted + int(accept),
        incidents=chain.incidents + incidents,
        sum_q=chain.sum_q + new_x.q,
        sum_q2=chain.sum_q2 + new_x.q ** 2,
    )


def underdamped_step(x, prob, dt, gamma, beta, rng):
    """Palindromic splitting of underdamped Langevin: half OU, leapfrog, half OU.

    The OU half-map is exact: p <- exp(-gamma dt/2) p + sqrt((1 -
    exp(-gamma dt)) / beta) xi.  With gamma = 0 this is exactly one
    (noise-free) leapfrog step; beta = inf disables the noise.
    """
    if gamma < 0:
        raise DomainError("friction gamma must be >= 0")
    if not beta > 0:
        raise DomainError("inverse temperature beta must be positive")
    decay = math.exp(-0.5 * gamma * dt)
    noise = 0.0 if math.isinf(beta) else math.sqrt((1.0 - math.exp(-gamma * dt)) / beta)
    d = x.dim
    p = decay * x.p + noise * rng.standard_normal(d)
    p = p - 0.5 * dt * prob.grad(x.q)
    q = x.q + dt * p
    p = p - 0.5 * dt * prob.grad(q)
    p = decay * p + noise * rng.standard_normal(d)
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
        raise DivergenceError("underdamped Langevin step diverged")
    return PhasePoint(q, p)


def overdamped_em_step(q, prob, dt, beta, rng):
    """Euler-Maruyama step q - dt grad V(q) + sqrt(2 dt / beta) xi."""
    if not beta > 0:
        raise DomainError("inverse temperature beta must be positive")
    if math.isinf(beta):
        return gradient_flow_step(np.asarray(q, float), dt, prob)
    q = np.asarray(q, float)
    q_new = q - dt * prob.grad(q) + math.sqrt(2.0 * dt / beta) * rng.standard_normal(q.size)
    if not np.all(np.isfinite(q_new)):
        raise DivergenceError("Euler-Maruyama step diverged")
    return q_new


@dataclass
class DiffusionSpec:
    """Matrix fields S (symmetric PSD) and A (antisymmetric) of a
    target-preserving diffusion, plus how to take their divergence."""

    s_field: callable
    a_field: callable
    divergence: callable = None   # analytic x -> vector div(A + S), row-wise
    fd_step: float = 1e-5

    def validate_at(self, x):
        s = np.asarray(self.s_field(x), float)
        a = np.asarray(self.a_field(x), float)
        if np.max(np.abs(s - s.T)) > 1e-12:
            raise DomainError("S(x) is not symmetric at the sampled point")
        if np.max(np.abs(a + a.T)) > 1e-12:
            raise DomainError("A(x) is not antisymmetric at the sampled point")
        if np.min(np.linalg.eigvalsh(s)) < -1e-12:
            raise DomainError("S(x) has a negative eigenvalue at the sampled point")
        return s, a

    def total(self, x):
        return np.asarray(self.s_field(x), float) + np.asarray(self.a_field(x), float)

    def div_total(self, x):
        """(div M)_i = sum_j dM_ij/dx_j for M = A + S."""
        if self.divergence is not None:
            return np.asarray(self.divergence(x), float)
        x = np.asarray(x, float)
        h = self.fd_step
        div = np.zeros(x.size)
        for j in range(x.size):
            e = np.zeros(x.size)
            e[j] = h
            dm = (self.total(x + e) - self.total(x - e)) / (2.0 * h)
            div += dm[:, j]
        return div


def complete_recipe_drift(x, prob, spec):
    """Drift of the general target-preserving diffusion:
    -(A + S) grad V + div(A + S), divergence row-wise."""
    x = np.atleast_1d(np.asarray(x, float))
    s, a = spec.validate_at(x)
    return -(a + s) @ prob.grad(x) + spec.div_total(x)


def mcmc_estimate(samples, f):
    """Sample mean of f with a batch-means standard error.

    Uses floor(sqrt(n)) batches; requires at least 100 samples.
    """
    samples = np.asarray(samples, float)
    if samples.ndim == 1:
        samples = samples[:, None]
    n = samples.shape[0]
    if n < 100:
        raise DomainError(f"mcmc_estimate needs >= 100 samples, got {n}")
    fs = np.asarray([float(f(s)) for s in samples])
    mean = float(fs.mean())
    n_batches = int(math.floor(math.sqrt(n)))
    batch_size = n // n_batches
    used = n_batches * batch_size
    batch_means = fs[:used].reshape(n_batches, batch_size).mean(axis=1)
    stderr = float(batch_means.std(ddof=1) / math.sqrt(n_batches))
    return mean, stderr


def run_hmc_chain(prob, g, dt, L, n_draws, rng, q0=None, jitter=0.0,
                  keep_samples=True):
    """Drive a single HMC chain; returns (final ChainState, samples array)."""
    q0 = np.zeros(prob.dim) if q0 is None else np.atleast_1d(np.asarray(q0, float))
    chain = ChainState.start(q0)
    samples = np.empty((n_draws, prob.dim)) if keep_samples else None
    for i in range(n_draws):
        chain = hmc_draw(chain, prob, g, dt, L, rng, jitter=jitter)
        if keep_samples:
            samples[i] = chain.x.q
    return chain, samples


def write_samples_csv(path_or_file, samples, accepted=None, chain_id=0,
                      momenta=None):
    """CSV dump: chain,step,accepted,q_1..q_d (momenta appended on request)."""
    samples = np.asarray(samples, float)
    if samples.ndim == 1:
        samples = samples[:, None]
    d = samples.shape[1]
    cols = ["chain", "step", "accepted"] + [f"q_{i + 1}" for i in range(d)]
    if momenta is not None:
        cols += [f"p_{i + 1}" for i in range(d)]
    lines = [",".join(cols)]
    for i, row in enumerate(samples):
        acc = 1 if accepted is None else int(accepted[i])
        fields = [str(chain_id), str(i), str(acc)]
        fields += [f"{v:.17e}" for v in row]
        if momenta is not None:
            fields += [f"{v:.17e}" for v in momenta[i]]
        lines.append(",".join(fields))
    body = "\n".join(lines) + "\n"
    if hasattr(path_or_file, "write"):
        path_or_file.write(body)
    else:
        with open(path_or_file, "w") as fh:
            fh.write(body)
    return body
