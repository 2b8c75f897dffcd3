"""Kernel discrepancies (MMD, KSD), score matching, and natural-gradient fits."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (
    CapabilityError,
    ConditioningError,
    ConditioningWarning,
    DegenerateSampleError,
    DomainError,
)

__all__ = [
    "KernelSpec",
    "ScoreModel",
    "GaussianLocationModel",
    "TranslationGenerator",
    "median_heuristic",
    "mmd_squared",
    "stein_kernel",
    "stein_gram",
    "ksd_u_statistic",
    "sm_estimate",
    "information_tensor",
    "natural_gradient_step",
    "sm_ngd_fit",
]


def _as_samples(x):
    arr = np.asarray(x, float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise DomainError(f"samples must be (n, d) arrays, got shape {arr.shape}")
    return arr


class KernelSpec:
    """Scalar base kernel with closed-form first and mixed-second derivatives.

    Families: gaussian(sigma) and inverse_multiquadric(c, beta) with
    k(x, y) = (c^2 + ||x-y||^2)^(-beta), beta in (0, 1).
    """

    def __init__(self, family, **params):
        if family == "gaussian":
            sigma = float(params.pop("sigma"))
            if not sigma > 0:
                raise DomainError("gaussian kernel needs sigma > 0")
            self.params = {"sigma": sigma}
        elif family == "inverse_multiquadric":
            c = float(params.pop("c"))
            beta = float(params.pop("beta"))
            if not c > 0:
                raise DomainError("inverse multiquadric needs c > 0")
            if not 0.0 < beta < 1.0:
                raise DomainError("inverse multiquadric needs beta in (0, 1)")
            self.params = {"c": c, "beta": beta}
        else:
            raise DomainError(f"unknown kernel family {family!r}")
        if params:
            raise DomainError(f"unexpected kernel parameters {sorted(params)}")
        self.family = family

    @classmethod
    def gaussian(cls, sigma):
        return cls("gaussian", sigma=sigma)

    @classmethod
    def inverse_multiquadric(cls, c=1.0, beta=0.5):
        return cls("inverse_multiquadric", c=c, beta=beta)

    # All pairwise helpers take X (n, d) and Y (m, d) and return (n, m[, d]).
    def _diff(self, x_arr, y_arr):
        return x_arr[:, None, :] - y_arr[None, :, :]

    def gram(self, x_arr, y_arr):
        diff = self._diff(_as_samples(x_arr), _as_samples(y_arr))
        r2 = np.sum(diff * diff, axis=2)
        if self.family == "gaussian":
            s2 = self.params["sigma"] ** 2
            return np.exp(-0.5 * r2 / s2)
        c, beta = self.params["c"], self.params["beta"]
        return (c * c + r2) ** (-beta)

    def grad_x_gram(self, x_arr, y_arr):
        """d k / d x, shape (n, m, d)."""
        diff = self._diff(_as_samples(x_arr), _as_samples(y_arr))
        r2 = np.sum(diff * diff, axis=2)
        if self.family == "gaussian":
            s2 = self.params["sigma"] ** 2
            return -diff / s2 * np.exp(-0.5 * r2 / s2)[:, :, None]
        c, beta = self.params["c"], self.params["beta"]
        u = c * c + r2
        return -2.0 * beta * diff * (u ** (-beta - 1.0))[:, :, None]

    def grad_y_gram(self, x_arr, y_arr):
        return -self.grad_x_gram(x_arr, y_arr)

    def mixed_trace_gram(self, x_arr, y_arr):
        """sum_i d^2 k / (d x_i d y_i), shape (n, m)."""
        x_arr, y_arr = _as_samples(x_arr), _as_samples(y_arr)
        d = x_arr.shape[1]
        diff = self._diff(x_arr, y_arr)
        r2 = np.sum(diff * diff, axis=2)
        if self.family == "gaussian":
            s2 = self.params["sigma"] ** 2
            return (d / s2 - r2 / s2 ** 2) * np.exp(-0.5 * r2 / s2)
        c, beta = self.params["c"], self.params["beta"]
        u = c * c + r2
        return (2.0 * beta * d * u ** (-beta - 1.0)
                - 4.0 * beta * (beta + 1.0) * r2 * u ** (-beta - 2.0))

    def mixed_hessian(self, x, y):
        """Full matrix d^2 k / (d x_i d y_j) at a single pair, shape (d, d)."""
        x = np.atleast_1d(np.asarray(x, float))
        y = np.atleast_1d(np.asarray(y, float))
        diff = x - y
        r2 = float(diff @ diff)
        eye = np.eye(x.size)
        if self.family == "gaussian":
            s2 = self.params["sigma"] ** 2
            k = math.exp(-0.5 * r2 / s2)
            return (eye / s2 - np.outer(diff, diff) / s2 ** 2) * k
        c, beta = self.params["c"], self.params["beta"]
        u = c * c + r2
        return (2.0 * beta * u ** (-beta - 1.0) * eye
                - 4.0 * beta * (beta + 1.0) * u ** (-beta - 2.0)
                * np.outer(diff, diff))

    # Scalar conveniences.
    def k(self, x, y):
        return float(self.gram(np.atleast_1d(x)[None, :] if np.ndim(x) == 1
                               else np.atleast_2d(x),
                               np.atleast_2d(y))[0, 0])

    def grad_x(self, x, y):
        return self.grad_x_gram(np.atleast_2d(x), np.atleast_2d(y))[0, 0]

    def grad_y(self, x, y):
        return -self.grad_x(x, y)

    def mixed_trace(self, x, y):
        return float(self.mixed_trace_gram(np.atleast_2d(x), np.atleast_2d(y))[0, 0])


_MEDIAN_SUBSAMPLE = 2000


def median_heuristic(samples):
    """Median of squared pairwise distances over distinct pairs.

    Exact for n <= 2000; above that a fixed-seed subsample of 2000 points is
    used.  Returns sigma^2 (the squared bandwidth).
    """
    x_arr = _as_samples(samples)
    if x_arr.shape[0] < 2:
        raise DomainError("median heuristic needs at least 2 points")
    if x_arr.shape[0] > _MEDIAN_SUBSAMPLE:
        idx = np.random.Generator(np.random.PCG64(0)).choice(
            x_arr.shape[0], size=_MEDIAN_SUBSAMPLE, replace=False)
        x_arr = x_arr[np.sort(idx)]
    diff = x_arr[:, None, :] - x_arr[None, :, :]
    r2 = np.sum(diff * diff, axis=2)
    iu = np.triu_indices(x_arr.shape[0], k=1)
    vals = r2[iu]
    if np.all(vals == 0.0):
        raise DegenerateSampleError("all points identical; bandwidth undefined")
    return float(np.median(vals))


def mmd_squared(x_samples, y_samples, kernel, mode="v"):
    """Squared maximum mean discrepancy between two sample sets.

    mode='v': biased V-statistic (includes diagonal terms, always >= 0).
    mode='u': unbiased U-statistic (diagonal excluded in same-set sums).
    """
    if mode not in ("v", "u"):
        raise DomainError(f"unknown MMD mode {mode!r}")
    x_arr, y_arr = _as_samples(x_samples), _as_samples(y_samples)
    n, m = x_arr.shape[0], y_arr.shape[0]
    if n < 1 or m < 1:
        raise DomainError("both sample sets must be non-empty")
    if mode == "u" and (n < 2 or m < 2):
        raise DomainError("U-statistic MMD needs >= 2 points per set")
    kxx = kernel.gram(x_arr, x_arr)
    kyy = kernel.gram(y_arr, y_arr)
    kxy = kernel.gram(x_arr, y_arr)
    if mode == "v":
        val = kxx.mean() + kyy.mean() - 2.0 * kxy.mean()
        return max(float(val), 0.0)  # clips roundoff-level negatives
    sxx = (kxx.sum() - np.trace(kxx)) / (n * (n - 1))
    syy = (kyy.sum() - np.trace(kyy)) / (m * (m - 1))
    return float(sxx + syy - 2.0 * kxy.mean())


def stein_kernel(x, y, score, kernel):
    """Stein reproducing kernel for K = k I, in expanded score form:

    k_mu(x, y) = tr d_x d_y k + s(x).d_y k + s(y).d_x k + k s(x).s(y)

    The expanded form avoids the density-ratio underflow of the definition;
    equivalence with the density-weighted form is a tested property.
    """
    x = np.atleast_1d(np.asarray(x, float))
    y = np.atleast_1d(np.asarray(y, float))
    sx, sy = np.asarray(score(x), float), np.asarray(score(y), float)
    if not (np.all(np.isfinite(sx)) and np.all(np.isfinite(sy))):
        raise DomainError("score is non-finite at an evaluation point")
    return float(
        kernel.mixed_trace(x, y)
        + sx @ kernel.grad_y(x, y)
        + sy @ kernel.grad_x(x, y)
        + kernel.k(x, y) * (sx @ sy)
    )


def stein_gram(x_samples, score, kernel):
    """Full m x m Stein-kernel Gram matrix (vectorised)."""
    x_arr = _as_samples(x_samples)
    scores = np.asarray([score(row) for row in x_arr], float)
    k = kernel.gram(x_arr, x_arr)
    gx = kernel.grad_x_gram(x_arr, x_arr)
    mixed = kernel.mixed_trace_gram(x_arr, x_arr)
    # s(x_i) . d_y k(x_i, x_j) = -s(x_i) . gx[i, j]; s(x_j) . d_x k = +.
    term_x = -np.einsum("id,ijd->ij", scores, gx)
    term_y = np.einsum("jd,ijd->ij", scores, gx)
    cross = k * (scores @ scores.T)
    return mixed + term_x + term_y + cross


def ksd_u_statistic(x_samples, score, kernel, with_stderr=False):
    """Unbiased KSD estimate: mean of the Stein kernel over distinct pairs.

    May be negative (it is unbiased for zero at the target).  With
    with_stderr=True also returns the asymptotic standard error computed
    from the per-point conditional means (valid off the target, where the
    U-statistic is non-degenerate).
    """
    x_arr = _as_samples(x_samples)
    m = x_arr.shape[0]
    if m < 2:
        raise DomainError("KSD U-statistic needs m >= 2")
    gram = stein_gram(x_arr, score, kernel)
    total = gram.sum() - np.trace(gram)
    value = float(total / (m * (m - 1)))
    if not with_stderr:
        return value
    h = (gram.sum(axis=1) - np.diag(gram)) / (m - 1)
    var = 4.0 * np.var(h, ddof=1) / m
    return value, float(math.sqrt(max(var, 0.0)))


class ScoreModel:
    """Parametric score model: x -> d_x log q_theta(x) plus its theta
    derivatives, with an optional matrix field B (default identity)."""

    def __init__(self, theta, dim, score, dscore_dtheta, b_field=None,
                 score_div_b=None, sample=None, log_density=None,
                 sm_theta_grad=None, fd_fallback=False, name=""):
        self.theta = np.atleast_1d(np.asarray(theta, float))
        self.dim = int(dim)
        self._score = score
        self._dscore_dtheta = dscore_dtheta
        self._b_field = b_field
        self._score_div_b = score_div_b
        self._sample = sample
        self._log_density = log_density
        self._sm_theta_grad = sm_theta_grad
        self.fd_fallback = bool(fd_fallback)
        self.name = name

    @property
    def n_params(self):
        return self.theta.size

    def b(self, x):
        if self._b_field is None:
            return np.eye(self.dim)
        return np.asarray(self._b_field(x), float)

    def score(self, x):
        return np.asarray(self._score(x, self.theta), float)

    def dscore_dtheta(self, x):
        """d/dtheta of the score, shape (dim, n_params)."""
        out = np.asarray(self._dscore_dtheta(x, self.theta), float)
        return out.reshape(self.dim, self.n_params)

    def score_div_b(self, x):
        """d_x . (B B^T d_x log q_theta)(x)."""
        if self._score_div_b is not None:
            return float(self._score_div_b(x, self.theta))
        if not self.fd_fallback:
            raise CapabilityError(
                f"model {self.name!r} lacks an analytic score divergence; "
                "enable fd_fallback to use finite differences")
        h = 1e-5
        x = np.atleast_1d(np.asarray(x, float))
        div = 0.0
        for j in range(self.dim):
            e = np.zeros(self.dim)
            e[j] = h
            hi = self.b(x + e) @ self.b(x + e).T @ self.score(x + e)
            lo = self.b(x - e) @ self.b(x - e).T @ self.score(x - e)
            div += (hi[j] - lo[j]) / (2.0 * h)
        return float(div)

    def sample(self, n, rng):
        if self._sample is None:
            raise CapabilityError(f"model {self.name!r} cannot sample")
        return _as_samples(self._sample(n, self.theta, rng))

    def log_density(self, x):
        if self._log_density is None:
            raise CapabilityError(f"model {self.name!r} has no log-density")
        return float(self._log_density(x, self.theta))

    def sm_theta_grad(self, x_samples):
        """d/dtheta of the printed score-matching estimator over samples."""
        if self._sm_theta_grad is not None:
            return np.asarray(self._sm_theta_grad(_as_samples(x_samples),
                                                  self.theta), float)
        raise CapabilityError(
            f"model {self.name!r} has no analytic estimator gradient")

    def with_theta(self, theta):
        return ScoreModel(theta, self.dim, self._score, self._dscore_dtheta,
                          b_field=self._b_field, score_div_b=self._score_div_b,
                          sample=self._sample, log_density=self._log_density,
                          sm_theta_grad=self._sm_theta_grad,
                          fd_fallback=self.fd_fallback, name=self.name)


def GaussianLocationModel(theta, sigma=1.0, b_matrix=None):
    """N(theta, sigma^2 I) location family; everything in closed form."""
    theta = np.atleast_1d(np.asarray(theta, float))
    d = theta.size
    s2 = float(sigma) ** 2
    b_mat = np.eye(d) if b_matrix is None else np.asarray(b_matrix, float)
    bbt = b_mat @ b_mat.T

    def score(x, th):
        return -(np.atleast_1d(x) - th) / s2

    def dscore(x, th):
        return np.eye(d) / s2

    def div_b(x, th):
        return -np.trace(bbt) / s2

    def sample(n, th, rng):
        return th + sigma * rng.standard_normal((n, d))

    def log_density(x, th):
        r = np.atleast_1d(x) - th
        return -0.5 * float(r @ r) / s2 - 0.5 * d * math.log(2 * math.pi * s2)

    def sm_grad(x_arr, th):
        # d/dtheta mean(||B^T s||^2 + 2 div) = mean 2 (ds/dth)^T B B^T s.
        scores = -(x_arr - th) / s2
        return (2.0 / s2) * (bbt @ scores.mean(axis=0))

    return ScoreModel(theta, d, score, dscore, b_field=lambda x: b_mat,
                      score_div_b=div_b, sample=sample, log_density=log_density,
                      sm_theta_grad=sm_grad, name=f"gaussian_location(d={d})")


class TranslationGenerator:
    """Generative model T_theta(u) = u + theta over a base sampler."""

    def __init__(self, theta, base_sampler=None):
        self.theta = np.atleast_1d(np.asarray(theta, float))
        self.dim = self.theta.size
        self._base = base_sampler or (
            lambda n, rng: rng.standard_normal((n, self.dim)))

    def sample_base(self, n, rng):
        return _as_samples(self._base(n, rng))

    def push(self, u):
        return np.asarray(u, float) + self.theta

    def dpush_dtheta(self, u):
        return np.eye(self.dim)


def sm_estimate(x_samples, model):
    """Score-matching estimator:
    mean over samples of ||B^T d_x log q||^2 + 2 d_x.(B B^T d_x log q)."""
    x_arr = _as_samples(x_samples)
    total = 0.0
    for row in x_arr:
        b_mat = model.b(row)
        s = model.score(row)
        total += float(s @ b_mat @ b_mat.T @ s) + 2.0 * model.score_div_b(row)
    return total / x_arr.shape[0]


def _warn_if_indefinite(g):
    tr = float(np.trace(g))
    min_eig = float(np.min(np.linalg.eigvalsh(g)))
    if min_eig < -1e-8 * max(tr, 1e-300):
        warnings.warn(
            f"information tensor indefinite: min eigenvalue {min_eig:.3e}",
            ConditioningWarning, stacklevel=3)


def information_tensor(kind, model, n_mc, rng, kernel=None):
    """Monte Carlo estimate of the information tensor for SM, KSD or MMD.

    SM/KSD sample the model; MMD pushes base-measure samples through the
    generator.  The output is symmetrised.
    """
    if n_mc < 100:
        raise DomainError("information tensor needs MC size >= 100")
    if kind == "sm":
        x_arr = model.sample(n_mc, rng)
        p = model.n_params
        g = np.zeros((p, p))
        for row in x_arr:
            w = model.b(row).T @ model.dscore_dtheta(row)   # (d, p)
            g += w.T @ w
        g /= n_mc
    elif kind == "ksd":
        if kernel is None:
            raise DomainError("KSD information tensor needs a kernel")
        x_arr = model.sample(n_mc, rng)
        w = np.stack([model.b(row).T @ model.dscore_dtheta(row)
                      for row in x_arr])                     # (n, d, p)
        k = kernel.gram(x_arr, x_arr)
        # G_ij = E_x E_y [ k(x,y) w_j(x) . w_i(y) ]  (V-statistic over pairs)
        g = np.einsum("ab,adi,bdj->ij", k, w, w) / (n_mc * n_mc)
    elif kind == "mmd":
        if kernel is None:
            raise DomainError("MMD information tensor needs a kernel")
        u_arr = model.sample_base(n_mc, rng)
        v_arr = model.sample_base(n_mc, rng)
        p = model.theta.size
        g = np.zeros((p, p))
        for u in u_arr:
            x = model.push(u)
            dtu = model.dpush_dtheta(u)
            for v in v_arr:
                y = model.push(v)
                dtv = model.dpush_dtheta(v)
                g += dtu.T @ kernel.mixed_hessian(x, y) @ dtv
        g /= n_mc * n_mc
    else:
        raise DomainError(f"unknown information tensor kind {kind!r}")
    g = 0.5 * (g + g.T)
    _warn_if_indefinite(g)
    return g


def natural_gradient_step(theta, grad, g, step, ridge=None):
    """theta - step * (G + ridge I)^{-1} grad, solved by factorisation.

    Default ridge: 1e-8 * trace(G) / dim.
    """
    if not step > 0:
        raise DomainError("step size must be positive")
    theta = np.atleast_1d(np.asarray(theta, float))
    grad = np.atleast_1d(np.asarray(grad, float))
    g = np.atleast_2d(np.asarray(g, float))
    p = theta.size
    if ridge is None:
        ridge = 1e-8 * float(np.trace(g)) / p
    if ridge < 0:
        raise DomainError("ridge must be >= 0")
    try:
        factor = scipy.linalg.cho_factor(g + ridge * np.eye(p))
        direction = scipy.linalg.cho_solve(factor, grad)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise ConditioningError(
            "singular information tensor; increase the ridge") from exc
    return theta - step * direction


def sm_ngd_fit(x_samples, model, n_iter=50, step=1.0, tol=1e-10, n_mc=200,
               rng=None, ridge=None):
    """Fit a score model by natural-gradient descent on the SM objective.

    The loss is half the printed estimator, so its information tensor is its
    Hessian at the optimum and a unit step is exact Newton for quadratic
    families.  Returns (theta, per-iteration theta history).
    """
    x_arr = _as_samples(x_samples)
    history = [model.theta.copy()]
    for _ in range(n_iter):
        grad = 0.5 * model.sm_theta_grad(x_arr)
        g = information_tensor("sm", model, max(n_mc, 100),
                               rng or _dummy_rng())
        theta_new = natural_gradient_step(model.theta, grad, g, step,
                                          ridge=ridge)
        model = model.with_theta(theta_new)
        history.append(theta_new.copy())
        if np.linalg.norm(history[-1] - history[-2]) < tol:
            break
    return model.theta, history


class _dummy_rng:
    """Deterministic stand-in where the integrand is exact (constant)."""

    def standard_normal(self, size=None):
        return np.zeros(size)
