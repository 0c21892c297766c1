"""Spatial FastICA baseline for data whose acquisition times are known.

The images are treated as mixtures and the voxels as samples: each row of
``y`` (one image) is a linear combination of independent spatial maps, and
the mixing coefficients are the time courses. The implementation is the
symmetric fixed-point FastICA with the log-cosh contrast.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["RankDeficientError", "Whitening", "IcaResult", "whiten", "fastica", "sym_decorrelate"]


class RankDeficientError(np.linalg.LinAlgError):
    """The data has fewer informative directions than requested components."""


@dataclass(frozen=True)
class Whitening:
    """Whitened signals and the linear maps back to data space.

    Attributes
    ----------
    signals : ndarray (n_components, F)
        Whitened rows: zero mean and identity covariance over the F samples.
    whitener : ndarray (n_components, P)
        ``signals = whitener @ (y - mean)``.
    preimage : ndarray (P, n_components)
        ``preimage @ signals`` is the rank-``n_components`` principal
        component reconstruction of the centered data.
    mean : ndarray (P, 1)
        Row means removed before whitening.
    """

    signals: np.ndarray
    whitener: np.ndarray
    preimage: np.ndarray
    mean: np.ndarray


@dataclass(frozen=True)
class IcaResult:
    """Outcome of :func:`fastica`.

    Attributes
    ----------
    courses : ndarray (P, n_components)
        Mixing coefficients of every component in every image.
    maps : ndarray (n_components, F)
        Independent components, unit variance over the samples.
    unmixing : ndarray (n_components, n_components)
        Orthogonal matrix applied to the whitened signals.
    converged : bool
    n_iter : int
    """

    courses: np.ndarray
    maps: np.ndarray
    unmixing: np.ndarray
    converged: bool
    n_iter: int


def whiten(y, n_components, rank_tol=1e-10):
    """Center the rows of ``y`` and project onto unit-variance principal components.

    Parameters
    ----------
    y : ndarray (P, F)
        Mixtures in rows, samples in columns.
    n_components : int
    rank_tol : float
        Components whose singular value is below ``rank_tol`` times the
        largest are considered absent.

    Raises
    ------
    RankDeficientError
        If the centered data has rank below ``n_components``.
    """
    y = np.asarray(y, dtype=float)
    P, F = y.shape
    if not 1 <= n_components <= min(P, F):
        raise ValueError(f"n_components must be in [1, {min(P, F)}], got {n_components}")
    mean = y.mean(axis=1, keepdims=True)
    yc = y - mean
    u, sv, _ = np.linalg.svd(yc, full_matrices=False)
    if sv[0] == 0.0 or sv[n_components - 1] <= rank_tol * sv[0]:
        raise RankDeficientError(f"data rank is below the requested {n_components} components")
    u = u[:, :n_components]
    sv = sv[:n_components]
    # fix the sign of each direction so the output is deterministic
    flip = np.sign(u[np.argmax(np.abs(u), axis=0), np.arange(n_components)])
    u = u * flip
    scale = np.sqrt(F)
    whitener = (u / sv).T * scale
    preimage = u * sv / scale
    return Whitening(signals=whitener @ yc, whitener=whitener, preimage=preimage, mean=mean)


def sym_decorrelate(w):
    """Return ``(W W^T)^(-1/2) W``, the nearest orthogonal matrix to ``W``."""
    vals, vecs = np.linalg.eigh(w @ w.T)
    return (vecs / np.sqrt(vals)) @ vecs.T @ w


def fastica(white, n_components=None, max_iters=1000, tol=1e-10, seed=0):
    """Symmetric FastICA with the log-cosh contrast (nonlinearity ``tanh``).

    Parameters
    ----------
    white : Whitening
        Output of :func:`whiten`.
    n_components : int, optional
        Must equal the number of whitened signals when given.
    max_iters : int
    tol : float
        Stop once every row of the unmixing matrix changes direction by less
        than ``tol``, measured as ``max |1 - |<w_new, w_old>||``.
    seed : int
        Seeds the random initial unmixing matrix.

    Returns
    -------
    IcaResult
        When the iteration does not converge, the last iterate is returned
        with ``converged=False``.
    """
    x = white.signals
    n, F = x.shape
    if n_components is not None and n_components != n:
        raise ValueError(f"whitened input has {n} components, {n_components} requested")
    rng = np.random.default_rng(seed)
    w = sym_decorrelate(rng.standard_normal((n, n)))
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        g = np.tanh(w @ x)
        g_prime_mean = np.mean(1.0 - g * g, axis=1)
        w_new = sym_decorrelate(g @ x.T / F - g_prime_mean[:, None] * w)
        change = np.max(np.abs(np.abs(np.einsum("ij,ij->i", w_new, w)) - 1.0))
        w = w_new
        if change < tol:
            converged = True
            break
    maps = w @ x
    courses = white.preimage @ w.T
    return IcaResult(courses=courses, maps=maps, unmixing=w, converged=converged, n_iter=it)
