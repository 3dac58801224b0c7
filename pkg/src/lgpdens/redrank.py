"""Reduced-rank prior from Kronecker eigendecompositions (2D density estimation).

``K = K1 kron K2`` is approximated by ``V S V^T + Lambda`` where ``S`` holds
the largest eigenvalue products ``r1 r2``, ``V`` the matching Kronecker
eigenvectors and ``Lambda`` restores the exact diagonal.  Together with the
basis block the effective prior is ``Lambda + G G^T`` with
``G = [V S^(1/2), H chol(B)]``.  Everything below works with diagonal,
``m x (s+q)`` and ``(s+q) x (s+q)`` arrays only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse.linalg as spla

from .kernel import BasisPrior
from .laplace import MarginalResult, ModeResult
from .likelihood import Curvature, GridLikelihood


@dataclass
class AxisEigen:
    values: np.ndarray
    vectors: np.ndarray


@dataclass
class ReducedRankPrior:
    V: np.ndarray = field(repr=False)
    S: np.ndarray
    Lambda: np.ndarray = field(repr=False)
    diag_K: np.ndarray = field(repr=False)
    pairs: np.ndarray = field(repr=False)       # (s, 2) axis eigen indices
    axes: tuple[AxisEigen, AxisEigen] = field(repr=False)
    floored: np.ndarray = field(repr=False)
    axis_diags: tuple[np.ndarray, np.ndarray] = field(repr=False, default=None)

    @property
    def rank(self) -> int:
        return self.S.size


def _axis_eigen(K, name):
    r, U = np.linalg.eigh(K)
    if r.min() < -1e-10 * max(r.max(), 1e-300):
        raise np.linalg.LinAlgError(f"{name} is not positive semidefinite (eigenvalue {r.min():.3g})")
    order = np.argsort(r)[::-1]
    return AxisEigen(np.maximum(r[order], 0.0), U[:, order])


def kron_eig_truncate(K1, K2, cutoff: float = 1e-6, max_frac: float | int = 0.5) -> ReducedRankPrior:
    """Truncated eigendecomposition of ``kron(K1, K2)``.

    Keeps products ``r1 r2 > cutoff * max(r1 r2)``.  ``max_frac`` caps the
    rank: a value up to 1 is a fraction of ``m``, a larger value an absolute
    count.
    """
    e1 = _axis_eigen(np.asarray(K1, dtype=float), "K1")
    e2 = _axis_eigen(np.asarray(K2, dtype=float), "K2")
    m1, m2 = e1.values.size, e2.values.size
    m = m1 * m2
    prod = np.outer(e1.values, e2.values).ravel()
    order = np.argsort(prod, kind="stable")[::-1]
    top = prod[order[0]]
    keep = int(np.sum(prod[order] > cutoff * top)) if cutoff > 0 else m
    cap = int(np.floor(max_frac * m)) if max_frac <= 1 else int(max_frac)
    s = max(1, min(keep, cap))
    idx = order[:s]
    I, J = np.divmod(idx, m2)
    V = (e1.vectors[:, None, I] * e2.vectors[None, :, J]).reshape(m, s)
    S = prod[idx]
    diag_K = np.kron(np.diag(K1), np.diag(K2))
    raw = diag_K - np.einsum("ik,k,ik->i", V, S, V)
    floored = raw < 0
    Lam = np.where(floored, 0.0, raw)
    return ReducedRankPrior(V, S, Lam, diag_K, np.column_stack([I, J]), (e1, e2), floored,
                            (np.diag(K1).copy(), np.diag(K2).copy()))


def _eigvec_derivative(eig: AxisEigen, dK):
    """First-order eigenvalue and eigenvector derivatives of a symmetric matrix."""
    U, r = eig.vectors, eig.values
    P = U.T @ dK @ U
    gap = r[None, :] - r[:, None]                 # gap[j, i] = r_i - r_j
    tiny = np.abs(gap) <= 1e-12 * max(r.max(), 1e-300)
    F = np.where(tiny, 0.0, 1.0 / np.where(tiny, 1.0, gap))
    return np.diag(P).copy(), U @ (P * F)


@dataclass
class LowRankDerivative:
    """``dC = diag(dlam) + V diag(dS) V^T + dV diag(S) V^T + V diag(S) dV^T``."""

    dlam: np.ndarray
    dS: np.ndarray
    dV: np.ndarray | None

    def matvec(self, prior: ReducedRankPrior, a):
        Va = prior.V.T @ a
        out = self.dlam * a + prior.V @ (self.dS * Va)
        if self.dV is not None:
            out = out + self.dV @ (prior.S * Va) + prior.V @ (prior.S * (self.dV.T @ a))
        return out


class RRCovariance:
    """Prior ``C = Lambda + G G^T`` with structured Newton steps and sampling."""

    def __init__(self, prior: ReducedRankPrior, basis: BasisPrior | None = None,
                 derivatives: list[LowRankDerivative] | None = None):
        self.prior = prior
        self.basis = basis
        blocks = [prior.V * np.sqrt(prior.S)]
        if basis is not None and basis.q:
            blocks.append(basis.H @ np.linalg.cholesky(basis.B))
        self.G = np.hstack(blocks)
        self.lam = prior.Lambda
        self.m = self.G.shape[0]
        self.derivatives = derivatives or []

    def matvec(self, a):
        a = np.asarray(a, dtype=float)
        lam = self.lam if a.ndim == 1 else self.lam[:, None]
        return lam * a + self.G @ (self.G.T @ a)

    def diag(self) -> np.ndarray:
        return self.lam + np.einsum("ij,ij->i", self.G, self.G)

    def structure(self, curv: Curvature) -> "_PosteriorStructure":
        return _PosteriorStructure(self, curv)

    def newton_step(self, curv: Curvature, v):
        if curv.n.sum() == 0:
            return np.array(v, dtype=float)
        st = self.structure(curv)
        return v - st.Q(self.matvec(v))


class _PosteriorStructure:
    """Factorizations shared by the Newton step, determinant and sampling.

    With ``D = n diag(u)``, ``Z = (I + D Lambda)^{-1}`` and ``J = D^(1/2) G``:
    ``A = I + D^(1/2) C D^(1/2) = Z^{-1} + J J^T`` and ``L L^T = I + J^T Z J``.
    ``Q = (C + W^{-1})^{-1} = E - E 1 1^T E / (1^T E 1)`` with
    ``E = D^(1/2) A^{-1} D^(1/2)``.
    """

    def __init__(self, cov: RRCovariance, curv: Curvature):
        if curv.n_blocks != 1:
            raise ValueError("reduced-rank prior supports a single likelihood block")
        self.cov = cov
        self.curv = curv
        self.n = float(curv.n[0])
        self.D = self.n * curv.u[0]
        self.sD = np.sqrt(self.D)
        self.Z = 1.0 / (1.0 + self.D * cov.lam)
        self.J = self.sD[:, None] * cov.G
        inner = self.J.T @ (self.Z[:, None] * self.J)
        inner[np.diag_indices_from(inner)] += 1.0
        self.L = np.linalg.cholesky(inner)
        self.e1 = self.E(np.ones(cov.m))
        self.t = float(self.e1.sum())

    def A_inv(self, x):
        x = np.asarray(x, dtype=float)
        Z = self.Z if x.ndim == 1 else self.Z[:, None]
        zx = Z * x
        w = scipy.linalg.cho_solve((self.L, True), self.J.T @ zx)
        return zx - Z * (self.J @ w)

    def E(self, x):
        x = np.asarray(x, dtype=float)
        sD = self.sD if x.ndim == 1 else self.sD[:, None]
        return sD * self.A_inv(sD * x)

    def Q(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return self.E(x) - self.e1 * (self.e1 @ x) / self.t
        return self.E(x) - np.outer(self.e1, self.e1 @ x) / self.t

    def sigma(self, x):
        cx = self.cov.matvec(x)
        return cx - self.cov.matvec(self.Q(cx))

    def logdet(self) -> float:
        """``log|I + W C|`` by the determinant lemma."""
        return float(np.log1p(self.D * self.cov.lam).sum()
                     + 2.0 * np.log(np.diag(self.L)).sum()
                     + np.log(self.t / self.n))

    def _Y(self):
        # A^{-1} = diag(Z) - Y Y^T
        return scipy.linalg.solve_triangular(self.L, (self.Z[:, None] * self.J).T, lower=True).T

    def Q_diag(self) -> np.ndarray:
        Y = self._Y()
        a_inv_diag = self.Z - np.einsum("ij,ij->i", Y, Y)
        return self.D * a_inv_diag - self.e1**2 / self.t

    def sigma_diag(self) -> np.ndarray:
        cov = self.cov
        G, J, Z = cov.G, self.J, self.Z
        p = self.sD * cov.lam
        Y = self._Y()
        JZJ = J.T @ (Z[:, None] * J)
        pzp = (Z * p * p + 2.0 * p * Z * np.einsum("ij,ij->i", J, G)
               + np.einsum("ij,ij->i", G @ JZJ, G))
        PY = p[:, None] * Y + G @ (J.T @ Y)
        cec = pzp - np.einsum("ij,ij->i", PY, PY)
        ce1 = cov.matvec(self.e1)
        return cov.diag() - (cec - ce1**2 / self.t)

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Exact draws from ``N(0, Sigma)``: perturb the prior and data, then correct."""
        cov = self.cov
        m, r = cov.G.shape
        x = np.sqrt(cov.lam)[:, None] * rng.standard_normal((m, size)) \
            + cov.G @ rng.standard_normal((r, size))
        e = self.curv.R(rng.standard_normal((m, size)))
        w = x + cov.matvec(e)
        return (w - cov.matvec(self.Q(w))).T


class RRGaussian:
    """Laplace posterior under the reduced-rank prior (sampling interface)."""

    def __init__(self, cov: RRCovariance, curv: Curvature, dense_limit: int = 200):
        self.cov = cov
        self.m = cov.m
        self.dense_limit = dense_limit
        self.n = float(curv.n.sum())
        self.st = cov.structure(curv) if self.n > 0 else None
        self._axes = None

    def sigma(self, x):
        if self.st is None:
            return self.cov.matvec(x)
        return self.st.sigma(x)

    def draw(self, rng, size):
        if self.st is None:
            m, r = self.cov.G.shape
            x = np.sqrt(self.cov.lam)[:, None] * rng.standard_normal((m, size)) \
                + self.cov.G @ rng.standard_normal((r, size))
            return x.T
        return self.st.draw(rng, size)

    def principal_axes(self, k: int):
        if self._axes is None or self._axes[0].size < k:
            if self.m <= self.dense_limit or k >= self.m - 1:
                vals, vecs = np.linalg.eigh(self.sigma(np.eye(self.m)))
            else:
                op = spla.LinearOperator((self.m, self.m), matvec=self.sigma, dtype=float)
                vals, vecs = spla.eigsh(op, k=k, which="LA", v0=np.ones(self.m))
            order = np.argsort(vals)[::-1]
            self._axes = (np.sqrt(np.maximum(vals[order], 0.0)), vecs[:, order])
        sd, V = self._axes
        return sd[:k], V[:, :k]


def rr_derivatives(prior: ReducedRankPrior, dK1_list, dK2_list, sigma_grad: bool = True):
    """Derivatives of ``Lambda + V S V^T`` for each hyperparameter.

    ``dK1_list``/``dK2_list`` hold derivatives of the axis matrices with respect
    to parameters acting on one axis only; the magnitude derivative (``K``
    itself) is added first when ``sigma_grad`` is set.
    """
    e1, e2 = prior.axes
    I, J = prior.pairs[:, 0], prior.pairs[:, 1]
    keep = ~prior.floored
    out = []
    if sigma_grad:
        out.append(LowRankDerivative(prior.Lambda * keep, prior.S.copy(), None))

    def axis_term(axis, dK, ddiag):
        eig = prior.axes[axis]
        dr, dU = _eigvec_derivative(eig, dK)
        if axis == 0:
            dS = dr[I] * e2.values[J]
            dV = (dU[:, None, I] * e2.vectors[None, :, J]).reshape(prior.V.shape)
        else:
            dS = e1.values[I] * dr[J]
            dV = (e1.vectors[:, None, I] * dU[None, :, J]).reshape(prior.V.shape)
        diag_lr = (np.einsum("ik,k,ik->i", prior.V, dS, prior.V)
                   + 2.0 * np.einsum("ik,k,ik->i", dV, prior.S, prior.V))
        dlam = (ddiag - diag_lr) * keep
        return LowRankDerivative(dlam, dS, dV)

    d1, d2 = prior.axis_diags
    for dK in dK1_list:
        out.append(axis_term(0, dK, np.kron(np.diag(dK), d2)))
    for dK in dK2_list:
        out.append(axis_term(1, dK, np.kron(d1, np.diag(dK))))
    return out


def rr_marginal(mode: ModeResult, cov: RRCovariance, lik: GridLikelihood,
                with_grad: bool = True) -> MarginalResult:
    """Approximate log marginal likelihood and gradient under the reduced-rank prior."""
    if lik.n == 0:
        logq = -0.5 * float(mode.a @ mode.f) + mode.log_lik
        return MarginalResult(logq, np.zeros(len(cov.derivatives)), 0.0, cov.diag())
    st = cov.structure(mode.curvature)
    logdet = st.logdet()
    logq = -0.5 * float(mode.a @ mode.f) + mode.log_lik - 0.5 * logdet
    if not with_grad:
        return MarginalResult(logq, np.zeros(0), logdet, np.zeros(0))

    prior = cov.prior
    a = mode.a
    sigma_diag = st.sigma_diag()
    sigma_u = st.sigma(mode.curvature.u[0])
    s2 = mode.curvature.implicit_weights(sigma_diag, sigma_u)
    q_diag = st.Q_diag()
    QV = st.Q(prior.V)
    vqv = np.einsum("ik,ik->k", prior.V, QV)
    Va = prior.V.T @ a

    grad = np.empty(len(cov.derivatives))
    for j, d in enumerate(cov.derivatives):
        quad = d.dlam @ (a * a) + d.dS @ (Va**2)
        trace = q_diag @ d.dlam + d.dS @ vqv
        if d.dV is not None:
            dVa = d.dV.T @ a
            quad += 2.0 * prior.S @ (dVa * Va)
            trace += 2.0 * prior.S @ np.einsum("ik,ik->k", d.dV, QV)
        b = d.matvec(prior, a)
        df = b - cov.matvec(st.Q(b))
        grad[j] = 0.5 * quad - 0.5 * trace + s2 @ df
    return MarginalResult(logq, grad, logdet, sigma_diag)


def rr_posterior_sample(cov: RRCovariance, mode: ModeResult, size: int, seed=None) -> np.ndarray:
    """Latent draws ``f ~ N(f_hat, Sigma)`` (rows)."""
    g = RRGaussian(cov, mode.curvature)
    return mode.f[None, :] + g.draw(np.random.default_rng(seed), size)
