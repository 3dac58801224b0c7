"""Squared exponential covariance, polynomial basis prior and hyperpriors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.special import gammaln


class FactorizationError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class Hyperparameters:
    log_sigma2: float
    log_lengthscales: tuple[float, ...]

    @classmethod
    def from_vector(cls, theta) -> "Hyperparameters":
        theta = np.asarray(theta, dtype=float).ravel()
        return cls(float(theta[0]), tuple(float(t) for t in theta[1:]))

    @classmethod
    def default(cls, dims: int) -> "Hyperparameters":
        return cls(0.0, (0.0,) * dims)

    def to_vector(self) -> np.ndarray:
        return np.array((self.log_sigma2,) + tuple(self.log_lengthscales))

    @property
    def sigma2(self) -> float:
        return float(np.exp(self.log_sigma2))

    @property
    def lengthscales(self) -> np.ndarray:
        return np.exp(np.asarray(self.log_lengthscales))

    def to_dict(self) -> dict:
        return {
            "sigma2": self.sigma2,
            "lengthscales": self.lengthscales.tolist(),
            "log_sigma2": self.log_sigma2,
            "log_lengthscales": list(self.log_lengthscales),
        }


@dataclass(frozen=True)
class BasisPrior:
    """Explicit basis ``H`` with coefficient prior ``N(b, B)``, ``b = 0``."""

    H: np.ndarray = field(repr=False)
    B: np.ndarray = field(repr=False)

    @classmethod
    def polynomial(cls, X, variance: float = 100.0) -> "BasisPrior":
        H = basis_matrix(X)
        return cls(H, variance * np.eye(H.shape[1]))

    @classmethod
    def none(cls, m: int) -> "BasisPrior":
        return cls(np.zeros((m, 0)), np.zeros((0, 0)))

    @property
    def q(self) -> int:
        return self.H.shape[1]

    def cov(self) -> np.ndarray:
        return self.H @ self.B @ self.H.T

    def matvec(self, v: np.ndarray) -> np.ndarray:
        if self.q == 0:
            return np.zeros_like(v)
        return self.H @ (self.B @ (self.H.T @ v))


@dataclass(frozen=True)
class HyperPrior:
    """Half Student-t priors on the magnitude ``sigma`` and each length-scale.

    The scale parameters are the square roots of the configured "variances"
    (a one degree of freedom Student-t has no finite variance).
    """

    sigma_scale2: float = 10.0
    length_scale2: float = 1.0
    nu: float = 1.0

    @classmethod
    def default(cls, dims: int) -> "HyperPrior":
        return cls(sigma_scale2=10.0 if dims == 1 else 1000.0)


def sqexp_cov_and_grads(X, theta):
    """Squared exponential covariance and its derivatives in log-parameters.

    Returns ``(K, grads)`` where ``grads[0] = dK/dlog(sigma2)`` and
    ``grads[1 + k] = dK/dlog(l_k)``.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if not isinstance(theta, Hyperparameters):
        theta = Hyperparameters.from_vector(theta)
    ell = theta.lengthscales
    if len(ell) != X.shape[1]:
        raise ValueError("one length-scale per input dimension required")
    sq = [(X[:, k, None] - X[None, :, k]) ** 2 / ell[k] ** 2 for k in range(X.shape[1])]
    K = theta.sigma2 * np.exp(-0.5 * sum(sq))
    return K, [K] + [K * s for s in sq]


def sqexp_cov(X, theta) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if not isinstance(theta, Hyperparameters):
        theta = Hyperparameters.from_vector(theta)
    ell = theta.lengthscales
    r2 = sum((X[:, k, None] - X[None, :, k]) ** 2 / ell[k] ** 2 for k in range(X.shape[1]))
    return theta.sigma2 * np.exp(-0.5 * r2)


def basis_matrix(X) -> np.ndarray:
    """Second-order polynomial basis: ``[x, x^2]`` in 1D and
    ``[x1, x1^2, x2, x2^2, x1 x2]`` in 2D."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    d = X.shape[1]
    if d == 1:
        return np.column_stack([X[:, 0], X[:, 0] ** 2])
    if d == 2:
        x1, x2 = X[:, 0], X[:, 1]
        return np.column_stack([x1, x1**2, x2, x2**2, x1 * x2])
    raise ValueError(f"basis defined for 1 or 2 dimensions, got {d}")


@dataclass
class PriorCov:
    """Dense effective prior covariance ``C = K + H B H^T + jitter I``."""

    matrix: np.ndarray = field(repr=False)
    chol: np.ndarray = field(repr=False)
    jitter: float

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return self.matrix @ v

    def solve(self, v: np.ndarray) -> np.ndarray:
        return scipy.linalg.cho_solve((self.chol, True), v)

    def quad_form(self, f: np.ndarray) -> float:
        z = scipy.linalg.solve_triangular(self.chol, f, lower=True)
        return float(z @ z)

    def logdet(self) -> float:
        return float(2.0 * np.log(np.diag(self.chol)).sum())


def prior_cov(K, basis: BasisPrior | None = None, jitter: float = 1e-8,
              max_jitter: float = 1e-2) -> PriorCov:
    """Form ``C`` and its Cholesky factor.

    ``jitter`` and ``max_jitter`` are relative to the largest diagonal entry
    of ``K``; the jitter grows tenfold until the factorization succeeds.
    """
    K = np.asarray(K, dtype=float)
    C = K if basis is None or basis.q == 0 else K + basis.cov()
    C = 0.5 * (C + C.T)
    scale = float(np.max(np.diag(K))) if K.size else 1.0
    scale = scale if scale > 0 else 1.0
    rel = jitter
    while True:
        eps = rel * scale
        Cj = C + eps * np.eye(len(C)) if eps > 0 else C.copy()
        try:
            L = np.linalg.cholesky(Cj)
            return PriorCov(Cj, L, eps)
        except np.linalg.LinAlgError:
            rel = max(rel * 10.0, 1e-12)
            if rel > max_jitter * (1 + 1e-9):
                raise FactorizationError(
                    f"prior covariance not positive definite at jitter {max_jitter:g}"
                ) from None


def half_t_logpdf(x, scale: float, nu: float = 1.0):
    """Log density of the half Student-t on ``x > 0`` (``-inf`` below zero)."""
    x = np.asarray(x, dtype=float)
    c = (np.log(2.0) + gammaln((nu + 1) / 2) - gammaln(nu / 2)
         - 0.5 * np.log(nu * np.pi) - np.log(scale))
    out = c - (nu + 1) / 2 * np.log1p(x**2 / (nu * scale**2))
    return np.where(x >= 0, out, -np.inf)


def hyper_log_prior(theta, prior: HyperPrior) -> tuple[float, np.ndarray]:
    """Log prior density of log-parameters and its gradient.

    Includes the Jacobians of ``sigma = exp(log_sigma2 / 2)`` and
    ``l = exp(log_l)`` so the result is a density over the log-parameters.
    """
    theta = np.asarray(theta.to_vector() if isinstance(theta, Hyperparameters) else theta,
                       dtype=float)
    nu = prior.nu
    grad = np.zeros_like(theta)

    sigma = np.exp(0.5 * theta[0])
    s2 = prior.sigma_scale2
    lp = float(half_t_logpdf(sigma, np.sqrt(s2), nu)) + np.log(sigma) - np.log(2.0)
    grad[0] = -(nu + 1) * sigma**2 / (nu * s2 + sigma**2) * 0.5 + 0.5

    ell = np.exp(theta[1:])
    s2 = prior.length_scale2
    lp += float(np.sum(half_t_logpdf(ell, np.sqrt(s2), nu))) + float(theta[1:].sum())
    grad[1:] = -(nu + 1) * ell**2 / (nu * s2 + ell**2) + 1.0
    return lp, grad
