"""Grid likelihood of the logistic GP and its block-structured curvature.

The negative Hessian of ``log p(y|f)`` is ``W = n (diag(u) - u u^T)`` (one
block per conditioning slice in density regression).  ``W`` is never formed;
products with ``W`` and with its factor

    R = sqrt(n) (diag(u)^(1/2) - u u^T diag(u)^(-1/2)) = sqrt(n) (diag(sqrt u) - u sqrt(u)^T)

are evaluated from ``u`` directly.  The second form needs no division by ``u``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp


@dataclass(frozen=True)
class SoftmaxState:
    u: np.ndarray
    n: float


def softmax_u(f, n: float = 0.0) -> SoftmaxState:
    f = np.asarray(f, dtype=float)
    z = np.exp(f - f.max())
    return SoftmaxState(z / z.sum(), float(n))


def log_lik_and_grad(y, f) -> tuple[float, np.ndarray]:
    """``y^T f - n logsumexp(f)`` and its gradient ``y - n u``."""
    y = np.asarray(y, dtype=float)
    f = np.asarray(f, dtype=float)
    n = y.sum()
    if n == 0:
        return 0.0, np.zeros_like(f)
    lse = logsumexp(f)
    u = np.exp(f - lse)
    return float(y @ f - n * lse), y - n * u


class Curvature:
    """Block-diagonal ``W`` with blocks ``n_b (diag(u_b) - u_b u_b^T)``.

    ``u`` has shape ``(n_blocks, block_size)``; ``n`` has one total per block.
    Vectors may be ``(m,)`` or stacked columns ``(m, k)``.
    """

    def __init__(self, u, n):
        self.u = np.atleast_2d(np.asarray(u, dtype=float))
        self.n = np.atleast_1d(np.asarray(n, dtype=float))
        self.sqrt_u = np.sqrt(self.u)
        self.sqrt_n = np.sqrt(self.n)
        self.n_blocks, self.block_size = self.u.shape

    @classmethod
    def from_state(cls, state: SoftmaxState) -> "Curvature":
        return cls(state.u[None, :], [state.n])

    @property
    def m(self) -> int:
        return self.n_blocks * self.block_size

    def _blocks(self, v):
        v = np.asarray(v, dtype=float)
        return v.reshape(self.n_blocks, self.block_size, -1), v.shape

    def W(self, v):
        b, shape = self._blocks(v)
        u = self.u[:, :, None]
        out = self.n[:, None, None] * (u * b - u * np.sum(u * b, axis=1, keepdims=True))
        return out.reshape(shape)

    def R(self, v):
        b, shape = self._blocks(v)
        u, su = self.u[:, :, None], self.sqrt_u[:, :, None]
        out = self.sqrt_n[:, None, None] * (su * b - u * np.sum(su * b, axis=1, keepdims=True))
        return out.reshape(shape)

    def RT(self, v):
        b, shape = self._blocks(v)
        u, su = self.u[:, :, None], self.sqrt_u[:, :, None]
        out = self.sqrt_n[:, None, None] * (su * b - su * np.sum(u * b, axis=1, keepdims=True))
        return out.reshape(shape)

    def dense(self) -> np.ndarray:
        """Explicit ``W`` (testing and small problems only)."""
        return self.W(np.eye(self.m))

    def dense_R(self) -> np.ndarray:
        return self.R(np.eye(self.m))

    def u_columns(self) -> np.ndarray:
        """``m x n_blocks`` matrix whose column ``b`` holds ``u_b`` in block ``b``."""
        U = np.zeros((self.n_blocks, self.block_size, self.n_blocks))
        U[np.arange(self.n_blocks), :, np.arange(self.n_blocks)] = self.u
        return U.reshape(self.m, self.n_blocks)

    def block_diag_of(self, M_cols: np.ndarray) -> np.ndarray:
        """Given ``Sigma @ u_columns()``, extract the stacked ``Sigma_bb u_b``."""
        Mb = M_cols.reshape(self.n_blocks, self.block_size, self.n_blocks)
        return Mb[np.arange(self.n_blocks), :, np.arange(self.n_blocks)].reshape(-1)

    def implicit_weights(self, sigma_diag, sigma_u) -> np.ndarray:
        """Derivative of ``-1/2 log|I + W C|`` with respect to ``f`` at fixed ``C``.

        ``sigma_diag`` is ``diag(Sigma)`` and ``sigma_u`` the stacked
        ``Sigma_bb u_b`` for the posterior covariance ``Sigma``.
        """
        d = np.asarray(sigma_diag, dtype=float).reshape(self.n_blocks, self.block_size)
        su = np.asarray(sigma_u, dtype=float).reshape(self.n_blocks, self.block_size)
        du = np.sum(d * self.u, axis=1, keepdims=True)
        usu = np.sum(su * self.u, axis=1, keepdims=True)
        out = -0.5 * self.n[:, None] * self.u * (d - du - 2.0 * su + 2.0 * usu)
        return out.reshape(-1)


def curvature_apply(state: SoftmaxState, v, mode: str = "W") -> np.ndarray:
    curv = Curvature.from_state(state)
    if mode == "W":
        return curv.W(v)
    if mode == "R":
        return curv.R(v)
    if mode in ("RT", "Rt", "R^T"):
        return curv.RT(v)
    raise ValueError(f"unknown curvature mode {mode!r}")


@dataclass(frozen=True)
class RegressionBlocks:
    """Counts on an ``n_slices x slice_size`` grid, normalized per slice."""

    counts: np.ndarray = field(repr=False)
    n_slices: int
    slice_size: int

    def __post_init__(self):
        if self.counts.size != self.n_slices * self.slice_size:
            raise ValueError("count vector does not match the slice layout")

    @property
    def totals(self) -> np.ndarray:
        return self.counts.reshape(self.n_slices, self.slice_size).sum(axis=1)


class GridLikelihood:
    """``log p(y|f) = sum_b (y_b^T f_b - n_b logsumexp(f_b))``.

    A single block gives the density estimation likelihood; one block per
    predictor slice gives density regression.
    """

    def __init__(self, y, n_blocks: int = 1):
        y = np.asarray(y, dtype=float)
        if y.size % n_blocks:
            raise ValueError("counts do not split into equal blocks")
        self.y = y
        self.n_blocks = n_blocks
        self.block_size = y.size // n_blocks
        self.yb = y.reshape(n_blocks, self.block_size)
        self.nb = self.yb.sum(axis=1)

    @classmethod
    def from_blocks(cls, blocks: RegressionBlocks) -> "GridLikelihood":
        return cls(blocks.counts, blocks.n_slices)

    @property
    def n(self) -> float:
        return float(self.nb.sum())

    @property
    def m(self) -> int:
        return self.y.size

    def _u(self, f):
        fb = np.asarray(f, dtype=float).reshape(self.n_blocks, self.block_size)
        lse = logsumexp(fb, axis=1, keepdims=True)
        return fb, lse, np.exp(fb - lse)

    def log_lik(self, f) -> float:
        fb, lse, _ = self._u(f)
        return float(np.sum(self.yb * fb) - np.sum(self.nb * lse[:, 0]))

    def log_lik_and_grad(self, f):
        fb, lse, u = self._u(f)
        val = float(np.sum(self.yb * fb) - np.sum(self.nb * lse[:, 0]))
        return val, (self.yb - self.nb[:, None] * u).reshape(-1)

    def curvature(self, f) -> Curvature:
        _, _, u = self._u(f)
        return Curvature(u, self.nb)

    def log_lik_batch(self, F) -> np.ndarray:
        """Log-likelihood of each row of ``F`` (``S x m``)."""
        F = np.asarray(F, dtype=float)
        Fb = F.reshape(len(F), self.n_blocks, self.block_size)
        lse = logsumexp(Fb, axis=2)
        return np.einsum("sbj,bj->s", Fb, self.yb) - lse @ self.nb

    def remainder_at(self, f_hat):
        """Fast evaluator of :meth:`taylor_remainder` with mode quantities cached."""
        fb, lse, u = self._u(f_hat)
        nb = self.nb[:, None]
        shape = (self.n_blocks, self.block_size)

        def r(deltas):
            D = np.atleast_2d(deltas)
            Db = D.reshape(len(D), *shape)
            Fb = fb[None] + Db
            mx = Fb.max(axis=2, keepdims=True)
            lse_new = np.log(np.exp(Fb - mx).sum(axis=2)) + mx[:, :, 0]
            ud = np.sum(u[None] * Db, axis=2)
            udd = np.sum(u[None] * Db * Db, axis=2)
            per = ud - (lse_new - lse[None, :, 0]) + 0.5 * (udd - ud * ud)
            return per @ nb[:, 0]

        return r

    def taylor_remainder(self, f_hat, deltas) -> np.ndarray:
        """``log p(y|f+d) - [log p(y|f) + g^T d - d^T W d / 2]`` per row of ``deltas``.

        At the posterior mode this equals the log ratio of the exact
        unnormalized posterior to its Laplace approximation, up to a constant.
        """
        deltas = np.atleast_2d(deltas)
        base, g = self.log_lik_and_grad(f_hat)
        curv = self.curvature(f_hat)
        quad = np.einsum("sm,ms->s", deltas, curv.W(deltas.T))
        return self.log_lik_batch(f_hat[None, :] + deltas) - base - deltas @ g + 0.5 * quad


def regression_log_lik_grad_curv(blocks: RegressionBlocks, f):
    lik = GridLikelihood.from_blocks(blocks)
    val, grad = lik.log_lik_and_grad(f)
    return val, grad, lik.curvature(f)
