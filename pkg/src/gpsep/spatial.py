"""Shared Gaussian-random-field covariance of the spatial maps.

The posterior covariance of every map is

    Sigma(alpha, beta) = alpha * K_rows(beta) (x) K_cols(beta) + jitter * I

with squared-exponential kernels on the lattice row and column coordinates.
Everything is done in the Kronecker eigenbasis ``U_rows (x) U_cols``, where
Sigma is diagonal with entries ``alpha * d_i * e_j + jitter``; the symmetric
square root, log-determinant and trace follow without forming an F x F matrix.

A flat (non-spatial) feature axis uses an identity column kernel, so Sigma is
``(alpha + jitter) * I`` and beta has no effect.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import _kernels
from .model import DimensionError, GridGeometry

__all__ = [
    "NonPositiveDefiniteError",
    "KernelFactor",
    "se_kernel_1d",
    "build_kernel",
    "apply_sqrt",
    "sample_maps",
    "kl_spatial",
    "kl_spatial_grad",
    "sqrt_apply_grad",
    "dense_covariance",
]


class NonPositiveDefiniteError(np.linalg.LinAlgError):
    """Sigma lost positive definiteness (usually beta too large with no jitter)."""


def se_kernel_1d(n, beta):
    """Squared-exponential Gram matrix on the coordinates 0..n-1."""
    x = np.arange(n, dtype=float)
    d2 = (x[:, None] - x[None, :]) ** 2
    return np.exp(-d2 / (2.0 * beta**2))


def _se_dlogbeta(n, beta):
    # d K / d log(beta) = K * (i - i')^2 / beta^2
    x = np.arange(n, dtype=float)
    d2 = (x[:, None] - x[None, :]) ** 2
    return np.exp(-d2 / (2.0 * beta**2)) * d2 / beta**2


def _eig(K):
    vals, vecs = np.linalg.eigh(K)
    # K is PSD; negative eigenvalues are round-off.
    return np.clip(vals, 0.0, None), vecs


@dataclass(frozen=True)
class KernelFactor:
    """Eigen-factorization of Sigma(alpha, beta) and its derived quantities.

    Attributes
    ----------
    row_factor, col_factor : ndarray
        Symmetric square roots of the unit-amplitude row and column kernels,
        so that ``sqrt(alpha) * (row_factor (x) col_factor)`` is the square
        root of Sigma when ``jitter == 0``. ``col_factor`` is None on a flat
        axis (identity).
    sqrt_eigs : ndarray, shape (H, W)
        Square roots of the eigenvalues of Sigma, jitter included.
    logdet, trace : float
    """

    grid: GridGeometry
    alpha: float
    beta: float
    jitter: float
    shape: tuple
    row_vals: np.ndarray
    row_vecs: np.ndarray
    col_vals: np.ndarray
    col_vecs: np.ndarray | None
    sqrt_eigs: np.ndarray
    logdet: float
    trace: float

    @property
    def n_features(self):
        return self.shape[0] * self.shape[1]

    @property
    def eigs(self):
        return self.sqrt_eigs**2

    @property
    def row_factor(self):
        return (self.row_vecs * np.sqrt(self.row_vals)) @ self.row_vecs.T

    @property
    def col_factor(self):
        if self.col_vecs is None:
            return None
        return (self.col_vecs * np.sqrt(self.col_vals)) @ self.col_vecs.T

    @cached_property
    def dkernels(self):
        """Row and column kernel derivatives w.r.t. log beta, rotated into the eigenbasis."""
        if not self.grid.is_lattice:
            return None, None
        H, W = self.shape
        drow = self.row_vecs.T @ _se_dlogbeta(H, self.beta) @ self.row_vecs
        if H == W:
            return drow, drow
        dcol = self.col_vecs.T @ _se_dlogbeta(W, self.beta) @ self.col_vecs
        return drow, dcol

    def to_eigenbasis(self, x):
        """Coordinates of row-major maps ``x`` (..., F) in the eigenbasis, as (..., H, W)."""
        x = np.asarray(x, dtype=float).reshape(x.shape[:-1] + self.shape)
        out = np.matmul(self.row_vecs.T, x)
        if self.col_vecs is not None:
            out = np.matmul(out, self.col_vecs)
        return out

    def from_eigenbasis(self, xt):
        out = np.matmul(self.row_vecs, xt)
        if self.col_vecs is not None:
            out = np.matmul(out, self.col_vecs.T)
        return out.reshape(xt.shape[:-2] + (self.n_features,))


def build_kernel(grid, alpha, beta, jitter=1e-6, n_features=None):
    """Factorize Sigma(alpha, beta) for ``grid``.

    ``n_features`` is required for a flat grid, which has no intrinsic size.

    Raises
    ------
    NonPositiveDefiniteError
        If some eigenvalue of Sigma is not strictly positive.
    """
    if not (alpha > 0 and beta > 0):
        raise ValueError("alpha and beta must be positive")
    if jitter < 0:
        raise ValueError("jitter must be non-negative")
    if grid.is_lattice:
        H, W = grid.height, grid.width
        row_vals, row_vecs = _eig(se_kernel_1d(H, beta))
        if W == H:
            col_vals, col_vecs = row_vals, row_vecs
        else:
            col_vals, col_vecs = _eig(se_kernel_1d(W, beta))
    else:
        if n_features is None:
            raise DimensionError("a flat grid needs n_features")
        H, W = 1, int(n_features)
        row_vals, row_vecs = np.ones(1), np.ones((1, 1))
        col_vals, col_vecs = np.ones(W), None
    eigs = alpha * np.outer(row_vals, col_vals) + jitter
    if not np.all(eigs > 0):
        raise NonPositiveDefiniteError(
            f"Sigma is singular for alpha={alpha:g}, beta={beta:g}, jitter={jitter:g}; "
            "beta is too large for the grid or jitter is zero"
        )
    logdet = float(np.sum(np.log(eigs)))
    trace = float(alpha * np.sum(row_vals) * np.sum(col_vals) + jitter * H * W)
    return KernelFactor(
        grid=grid,
        alpha=float(alpha),
        beta=float(beta),
        jitter=float(jitter),
        shape=(H, W),
        row_vals=row_vals,
        row_vecs=row_vecs,
        col_vals=col_vals,
        col_vecs=col_vecs,
        sqrt_eigs=np.sqrt(eigs),
        logdet=logdet,
        trace=trace,
    )


def kernel_for(sp, jitter=1e-6):
    return build_kernel(sp.grid, sp.alpha, sp.beta, jitter, n_features=sp.mu.shape[1])


def apply_sqrt(kf, x):
    """Multiply row-major maps ``x`` (..., F) by the symmetric square root of Sigma."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != kf.n_features:
        raise DimensionError(f"maps have {x.shape[-1]} features, kernel has {kf.n_features}")
    return kf.from_eigenbasis(kf.to_eigenbasis(x) * kf.sqrt_eigs)


def sample_maps(sp, kf, kappa):
    """Reparameterized maps ``A_n = mu_n + Sigma^(1/2) kappa_n``."""
    kappa = np.asarray(kappa, dtype=float)
    if kappa.shape != sp.mu.shape:
        raise DimensionError(f"kappa has shape {kappa.shape}, expected {sp.mu.shape}")
    return sp.mu + apply_sqrt(kf, kappa)


def kl_spatial(sp, kf):
    """KL between the map posterior N(mu_n, Sigma) and the N(0, I) prior, summed over maps."""
    n_src, F = sp.mu.shape
    return 0.5 * float(n_src * (kf.trace - F - kf.logdet) + np.sum(sp.mu**2))


def _dsigma_dlogbeta(kf):
    return kf.dkernels


def kl_spatial_grad(sp, kf):
    """Gradients of :func:`kl_spatial` w.r.t. ``(mu, log_alpha, log_beta)``."""
    n_src, F = sp.mu.shape
    eigs = kf.eigs
    prod = kf.alpha * np.outer(kf.row_vals, kf.col_vals)
    g_log_alpha = 0.5 * n_src * (kf.trace - kf.jitter * F - np.sum(prod / eigs))
    drow, dcol = _dsigma_dlogbeta(kf)
    if drow is None:
        g_log_beta = 0.0
    else:
        # trace of the SE kernel does not depend on beta (unit diagonal)
        dlogdet = kf.alpha * (
            np.sum(np.outer(np.diag(drow), kf.col_vals) / eigs)
            + np.sum(np.outer(kf.row_vals, np.diag(dcol)) / eigs)
        )
        g_log_beta = -0.5 * n_src * dlogdet
    return sp.mu.copy(), float(g_log_alpha), float(g_log_beta)


def sqrt_apply_grad(kf, kappa, upstream):
    """Gradient of ``sum_n upstream_n . (Sigma^(1/2) kappa_n)`` w.r.t. log alpha and log beta.

    Derivatives of the matrix square root use the Daleckii-Krein formula in
    the Kronecker eigenbasis: with ``q`` the square roots of the eigenvalues,
    the divided difference of ``sqrt`` between eigenvalues a and b is
    ``1 / (q_a + q_b)``.
    """
    kt = kf.to_eigenbasis(kappa)
    gt = kf.to_eigenbasis(upstream)
    q = kf.sqrt_eigs
    prod = kf.alpha * np.outer(kf.row_vals, kf.col_vals)
    g_log_alpha = float(np.sum(gt * kt * prod / (2.0 * q)))
    drow, dcol = _dsigma_dlogbeta(kf)
    if drow is None:
        return g_log_alpha, 0.0
    # row part:    sum gt[n,i,j] drow[i,k] e_j kt[n,k,j] / (q[i,j] + q[k,j])
    # column part: sum gt[n,i,j] dcol[j,l] d_i kt[n,i,l] / (q[i,j] + q[i,l])
    term_r, term_c = _kernels.sqrt_grad_contract(gt, kt, q, drow, dcol, kf.row_vals, kf.col_vals)
    return g_log_alpha, float(kf.alpha * (term_r + term_c))


def dense_covariance(kf):
    """Sigma as a dense F x F matrix (small grids only)."""
    if kf.col_vecs is None:
        return (kf.alpha * 1.0 + kf.jitter) * np.eye(kf.n_features)
    H, W = kf.shape
    Kr = (kf.row_vecs * kf.row_vals) @ kf.row_vecs.T
    Kc = (kf.col_vecs * kf.col_vals) @ kf.col_vecs.T
    return kf.alpha * np.kron(Kr, Kc) + kf.jitter * np.eye(H * W)
