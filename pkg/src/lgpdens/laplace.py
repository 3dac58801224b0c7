"""Laplace approximation: Newton mode finding and the approximate marginal likelihood.

The latent vector is carried as ``f = C a``.  Then ``f^T C^{-1} f = a^T f``
and the gradient of the log posterior is ``g(f) - a``, so ``C`` is never
inverted.  Newton steps use

    a_new = v - R (I + R^T C R)^{-1} R^T C v,   v = W f + g,   f_new = C a_new,

which equals ``f_new = (C^{-1} + W)^{-1} v``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse.linalg as spla

from .kernel import PriorCov
from .likelihood import Curvature, GridLikelihood
from .toeplitz import ToeplitzOperator

log = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    pass


class DenseCovariance:
    """Newton solver backed by the dense prior covariance."""

    def __init__(self, prior: PriorCov):
        self.prior = prior
        self.matrix = prior.matrix
        self.m = len(self.matrix)

    def matvec(self, a):
        return self.matrix @ a

    def inner_matrix(self, curv: Curvature) -> np.ndarray:
        RtC = curv.RT(self.matrix)
        M = curv.RT(RtC.T)
        M = 0.5 * (M + M.T)
        M[np.diag_indices_from(M)] += 1.0
        return M

    def newton_step(self, curv: Curvature, v):
        L = np.linalg.cholesky(self.inner_matrix(curv))
        rhs = curv.RT(self.matrix @ v)
        z = scipy.linalg.cho_solve((L, True), rhs)
        return v - curv.R(z)


class ToeplitzCovariance:
    """``C = T + H B H^T`` with ``T`` symmetric Toeplitz, products by FFT.

    The inner Newton system is solved by conjugate gradients.
    """

    def __init__(self, first_row, basis=None, cg_tol: float = 1e-10, cg_maxiter: int = 1000):
        self.toeplitz = ToeplitzOperator(first_row)
        self.basis = basis
        self.m = self.toeplitz.m
        self.cg_tol = cg_tol
        self.cg_maxiter = cg_maxiter
        self._z0 = None

    def matvec(self, a):
        out = self.toeplitz.matvec(a)
        if self.basis is not None and self.basis.q:
            out = out + self.basis.matvec(a)
        return out

    def dense(self) -> np.ndarray:
        C = self.toeplitz.dense()
        if self.basis is not None and self.basis.q:
            C = C + self.basis.cov()
        return C

    def newton_step(self, curv: Curvature, v):
        def mv(z):
            return z + curv.RT(self.matvec(curv.R(z)))

        op = spla.LinearOperator((self.m, self.m), matvec=mv, dtype=float)
        rhs = curv.RT(self.matvec(v))
        x0 = self._z0 if self._z0 is not None and self._z0.shape == rhs.shape else None
        z, info = spla.cg(op, rhs, x0=x0, rtol=self.cg_tol, atol=0.0, maxiter=self.cg_maxiter)
        if info > 0:
            log.warning("conjugate gradients stopped after %d iterations", info)
        self._z0 = z
        return v - curv.R(z)


@dataclass
class ModeResult:
    f: np.ndarray
    a: np.ndarray
    curvature: Curvature = field(repr=False)
    log_lik: float
    log_posterior: float
    iterations: int
    stationarity: float
    trace: list = field(default_factory=list, repr=False)


def find_mode(cov, lik: GridLikelihood, a0=None, max_iter: int = 100,
              obj_tol: float = 1e-10, grad_tol: float = 1e-6) -> ModeResult:
    """Damped Newton iteration for the posterior mode.

    ``cov`` supplies ``matvec`` and ``newton_step``; ``a0`` warm-starts the
    iteration (``f0 = C a0``).  A step is halved while it decreases the log
    posterior ``-a^T f / 2 + log p(y|f)``.
    """
    m = cov.m
    a = np.zeros(m) if a0 is None else np.array(a0, dtype=float)
    f = cov.matvec(a)
    ll, g = lik.log_lik_and_grad(f)
    psi = -0.5 * a @ f + ll
    trace = [float(psi)]
    dpsi = np.inf
    for it in range(1, max_iter + 1):
        curv = lik.curvature(f)
        v = curv.W(f) + g
        a_new = cov.newton_step(curv, v)
        f_new = cov.matvec(a_new)
        ll_new, g_new = lik.log_lik_and_grad(f_new)
        psi_new = -0.5 * a_new @ f_new + ll_new
        floor = psi - 1e-12 * max(1.0, abs(psi))
        alpha = 1.0
        a_t, f_t, ll_t, g_t, psi_t = a_new, f_new, ll_new, g_new, psi_new
        while psi_t < floor and alpha > 1e-10:
            alpha *= 0.5
            a_t = a + alpha * (a_new - a)
            f_t = f + alpha * (f_new - f)
            ll_t, g_t = lik.log_lik_and_grad(f_t)
            psi_t = -0.5 * a_t @ f_t + ll_t
        if psi_t < floor:
            # no ascent along the Newton direction; keep the current point
            a_t, f_t, ll_t, g_t, psi_t = a, f, ll, g, psi
        dpsi = psi_t - psi
        a, f, ll, g, psi = a_t, f_t, ll_t, g_t, psi_t
        trace.append(float(psi))
        stat = float(np.max(np.abs(g - a))) if m else 0.0
        if abs(dpsi) <= obj_tol * max(1.0, abs(psi)) and stat <= grad_tol:
            return ModeResult(f, a, lik.curvature(f), ll, psi, it, stat, trace)
    raise ConvergenceError(
        f"Newton iteration did not converge in {max_iter} iterations "
        f"(last change {dpsi:.3g}, stationarity {stat:.3g})"
    )


@dataclass
class MarginalResult:
    log_marginal: float
    grad: np.ndarray
    logdet: float
    sigma_diag: np.ndarray = field(repr=False)


def log_marginal_and_grad(mode: ModeResult, C, lik: GridLikelihood, grads=None) -> MarginalResult:
    """Approximate log marginal likelihood at the mode and its gradient.

    ``C`` is the dense prior covariance used for the mode and ``grads`` the
    list of ``dC/dtheta_j``.  The gradient combines the explicit dependence on
    ``C`` and the implicit dependence through the mode.
    """
    C = C.matrix if isinstance(C, PriorCov) else np.asarray(C)
    curv = mode.curvature
    m = len(C)
    RtC = curv.RT(C)
    M = curv.RT(RtC.T)
    M = 0.5 * (M + M.T)
    M[np.diag_indices_from(M)] += 1.0
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("factorization of I + R^T C R failed") from exc
    logdet = float(2.0 * np.log(np.diag(L)).sum())
    logq = -0.5 * float(mode.a @ mode.f) + mode.log_lik - 0.5 * logdet

    if grads is None:
        return MarginalResult(logq, np.zeros(0), logdet, np.zeros(0))

    X = scipy.linalg.solve_triangular(L, curv.RT(np.eye(m)), lower=True)   # L^{-1} R^T
    XC = scipy.linalg.solve_triangular(L, RtC, lower=True)
    Q = X.T @ X                                  # R M^{-1} R^T
    Sigma = C - XC.T @ XC                        # (C^{-1} + W)^{-1}
    sigma_diag = np.diag(Sigma).copy()
    sigma_u = curv.block_diag_of(Sigma @ curv.u_columns())
    s2 = curv.implicit_weights(sigma_diag, sigma_u)

    grad = np.empty(len(grads))
    for j, dC in enumerate(grads):
        b = dC @ mode.a
        explicit = 0.5 * mode.a @ b - 0.5 * np.sum(Q * dC)
        df = b - C @ (Q @ b)
        grad[j] = explicit + s2 @ df
    return MarginalResult(logq, grad, logdet, sigma_diag)
