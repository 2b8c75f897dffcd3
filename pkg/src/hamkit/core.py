"""Phase-space primitives: states, kinetic metrics, damping schedules, objectives.

Everything here is immutable after construction and safe to share between
parallel workers; the operations at the bottom are pure functions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import DomainError, NumericOverflowError

__all__ = [
    "PhasePoint",
    "KineticMetric",
    "DampingSchedule",
    "Problem",
    "evaluate_hamiltonian",
    "conformal_vector_field",
    "dissipation_rate",
    "delta_eta",
]


def _vector(x, name):
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.ndim != 1:
        raise DomainError(f"{name} must be a 1-d vector, got shape {arr.shape}")
    if arr.size < 1:
        raise DomainError(f"{name} must have length >= 1")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite entries")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class PhasePoint:
    """Position/momentum pair (q, p) in flat phase space."""

    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", _vector(self.q, "q"))
        object.__setattr__(self, "p", _vector(self.p, "p"))
        if self.q.shape != self.p.shape:
            raise DomainError(
                f"q and p must have identical length, got {self.q.size} and {self.p.size}"
            )

    @property
    def dim(self):
        return self.q.size

    def flip_momentum(self):
        return PhasePoint(self.q, -self.p)


class KineticMetric:
    """Constant symmetric positive-definite kinetic metric g.

    Caches the inverse and the Cholesky factor (g = L L^T); the factor is
    used for Gaussian momentum draws.  Positive-definiteness is certified at
    construction by the factorisation itself.
    """

    def __init__(self, g):
        g = np.asarray(g, dtype=float)
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise DomainError(f"metric must be a square matrix, got shape {g.shape}")
        if not np.all(np.isfinite(g)):
            raise DomainError("metric contains non-finite entries")
        g = 0.5 * (g + g.T)  # exactly symmetric by construction
        try:
            chol = np.linalg.cholesky(g)
        except np.linalg.LinAlgError as exc:
            raise DomainError("metric is not positive definite") from exc
        g_inv = scipy.linalg.cho_solve((chol, True), np.eye(g.shape[0]))
        g_inv = 0.5 * (g_inv + g_inv.T)
        defect = np.max(np.abs(g @ g_inv - np.eye(g.shape[0])))
        if defect > 1e-10:
            raise DomainError(
                f"metric too ill-conditioned: |g g_inv - I| = {defect:.3e} > 1e-10"
            )
        self.g = g
        self.g_inv = g_inv
        self.chol = chol
        for a in (self.g, self.g_inv, self.chol):
            a.flags.writeable = False

    @classmethod
    def identity(cls, d):
        return cls(np.eye(d))

    @classmethod
    def scaled_identity(cls, d, c):
        if c <= 0:
            raise DomainError("metric scale must be positive")
        return cls(c * np.eye(d))

    @property
    def dim(self):
        return self.g.shape[0]

    def inv_mul(self, p):
        """g^{-1} p."""
        return self.g_inv @ p

    def quad_inv(self, p):
        """p^T g^{-1} p."""
        return float(p @ self.g_inv @ p)

    def sample_momentum(self, rng):
        """Draw p ~ N(0, g), i.e. velocity g^{-1} p ~ N(0, g^{-1})."""
        return self.chol @ rng.standard_normal(self.dim)

    def is_identity(self):
        return bool(np.array_equal(self.g, np.eye(self.dim)))


@dataclass(frozen=True)
class DampingSchedule:
    """Damping coefficient gamma(t) with exact closed-form integrals.

    Supported kinds: 'constant' (gamma(t) = gamma), 'vanishing'
    (gamma(t) = r/t, defined for t >= t0 > 0) and 'zero'.
    """

    kind: str
    gamma: float = 0.0
    r: float = 3.0
    t0: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "vanishing", "zero"):
            raise DomainError(f"unknown damping kind {self.kind!r}")
        if self.kind == "constant" and not self.gamma > 0:
            raise DomainError("constant damping requires gamma > 0")
        if self.kind == "vanishing":
            if not self.r > 0:
                raise DomainError("vanishing damping requires r > 0")
            if not self.t0 > 0:
                raise DomainError("vanishing damping requires t0 > 0")

    @classmethod
    def constant(cls, gamma):
        return cls(kind="constant", gamma=float(gamma))

    @classmethod
    def vanishing(cls, r=3.0, t0=1.0):
        return cls(kind="vanishing", r=float(r), t0=float(t0))

    @classmethod
    def zero(cls):
        return cls(kind="zero")

    def start_time(self):
        """Earliest admissible time for this schedule."""
        return self.t0 if self.kind == "vanishing" else 0.0

    def gamma_at(self, t):
        if self.kind == "constant":
            return self.gamma
        if self.kind == "zero":
            return 0.0
        if t < self.t0:
            raise DomainError(f"vanishing schedule undefined at t={t} < t0={self.t0}")
        return self.r / t

    def delta_eta(self, t_a, t_b):
        """Exact integral of gamma over [t_a, t_b]."""
        if t_a > t_b:
            raise DomainError(f"delta_eta requires t_a <= t_b, got ({t_a}, {t_b})")
        if self.kind == "constant":
            return self.gamma * (t_b - t_a)
        if self.kind == "zero":
            return 0.0
        if t_a < self.t0:
            raise DomainError(f"vanishing schedule undefined at t={t_a} < t0={self.t0}")
        return self.r * math.log(t_b / t_a)


def delta_eta(sched, t_a, t_b):
    """Exact closed-form integral of the damping over [t_a, t_b]."""
    return sched.delta_eta(t_a, t_b)


_FD_STEP = float(np.cbrt(np.finfo(float).eps))


class Problem:
    """Differentiable objective f (doubling as negative log-density V).

    Gradients are user-supplied; ``with_fd_gradient`` builds a central
    finite-difference fallback for testing only and flags it as such.
    """

    def __init__(self, dim, value, grad, hessian_vec=None, f_star=None,
                 q_star=None, name="", grad_is_fd=False):
        if dim < 1:
            raise DomainError("problem dimension must be >= 1")
        self.dim = int(dim)
        self._value = value
        self._grad = grad
        self._hessian_vec = hessian_vec
        self.f_star = None if f_star is None else float(f_star)
        self.q_star = None if q_star is None else np.asarray(q_star, float)
        self.name = name
        self.grad_is_fd = bool(grad_is_fd)

    @classmethod
    def with_fd_gradient(cls, dim, value, **kwargs):
        def fd_grad(q):
            q = np.asarray(q, float)
            g = np.empty_like(q)
            for i in range(q.size):
                h = _FD_STEP * max(1.0, abs(q[i]))
                e = np.zeros_like(q)
                e[i] = h
                g[i] = (value(q + e) - value(q - e)) / (2 * h)
            return g

        return cls(dim, value, fd_grad, grad_is_fd=True, **kwargs)

    def value(self, q):
        return float(self._value(np.asarray(q, float)))

    def grad(self, q):
        return np.asarray(self._grad(np.asarray(q, float)), float)

    def hessian_vec(self, q, v):
        if self._hessian_vec is None:
            raise DomainError(f"problem {self.name!r} has no Hessian-vector product")
        return np.asarray(self._hessian_vec(np.asarray(q, float), np.asarray(v, float)), float)

    def gap(self, q):
        """f(q) - f_star; requires a known minimum."""
        if self.f_star is None:
            raise DomainError(f"problem {self.name!r} has no certified minimum")
        return self.value(q) - self.f_star


def evaluate_hamiltonian(x, g, prob):
    """H(q, p) = (1/2) p^T g^{-1} p + f(q)."""
    if x.dim != g.dim or x.dim != prob.dim:
        raise DomainError(
            f"dimension mismatch: state {x.dim}, metric {g.dim}, problem {prob.dim}"
        )
    kinetic = 0.5 * g.quad_inv(x.p)
    potential = prob.value(x.q)
    if not math.isfinite(kinetic):
        raise NumericOverflowError("kinetic term (1/2) p^T g^{-1} p is non-finite")
    if not math.isfinite(potential):
        raise NumericOverflowError("potential term f(q) is non-finite")
    return kinetic + potential


def conformal_vector_field(x, t, g, prob, sched):
    """Damped Hamiltonian field: dq = g^{-1} p, dp = -grad f(q) - gamma(t) p."""
    gamma = sched.gamma_at(t)
    dq = g.inv_mul(x.p)
    dp = -prob.grad(x.q) - gamma * x.p
    return dq, dp


def dissipation_rate(x, t, g, sched):
    """dH/dt along the damped flow: -gamma(t) p^T g^{-1} p, always <= 0."""
    return -sched.gamma_at(t) * g.quad_inv(x.p)
