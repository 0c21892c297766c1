"""Temporal sources as random-feature expansions of Gaussian processes.

Each source is

    S_n(t) = sqrt(2/J) * sum_j W[n, j] * cos(Omega[n, j] * t + b[j])

with frequencies ``Omega`` and weights ``W`` drawn from their variational
posteriors and phases ``b`` fixed at initialization. The derivative is
analytic, which is what the monotonicity likelihood consumes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .model import DimensionError

__all__ = [
    "SourceEval",
    "reparam_omega",
    "reparam_weights",
    "eval_sources",
    "monotonicity_logprob",
    "monotonicity_grad",
    "log_sigmoid",
    "kl_omega",
    "kl_omega_grad",
    "kl_weights",
    "kl_weights_grad",
]


class ExtrapolationWarning(UserWarning):
    """Query times fall outside [0, 1], where the sources were fitted."""


@dataclass(frozen=True)
class SourceEval:
    """Source values at query times and derivatives at control points."""

    s: np.ndarray
    s_prime: np.ndarray


def reparam_omega(tp, zeta):
    zeta = np.asarray(zeta, dtype=float)
    if zeta.shape != tp.r.shape:
        raise DimensionError(f"zeta has shape {zeta.shape}, expected {tp.r.shape}")
    return tp.r + tp.p * zeta


def reparam_weights(tp, epsilon):
    epsilon = np.asarray(epsilon, dtype=float)
    if epsilon.shape != tp.m.shape:
        raise DimensionError(f"epsilon has shape {epsilon.shape}, expected {tp.m.shape}")
    return tp.m + tp.s * epsilon


def _check_times(times, warn):
    times = np.asarray(times, dtype=float)
    if warn and times.size and (times.min() < 0.0 or times.max() > 1.0):
        warnings.warn("evaluating sources outside [0, 1]", ExtrapolationWarning, stacklevel=3)
    return times


def eval_sources(omega, w, phases, times, control_points, warn_extrapolation=True):
    """Evaluate every source at ``times`` and its derivative at ``control_points``.

    Parameters
    ----------
    omega, w : ndarray, shape (n_sources, J)
        Frequencies and weights.
    phases : ndarray, shape (J,)
    times : ndarray, shape (T,)
    control_points : ndarray, shape (C,)

    Returns
    -------
    SourceEval
        ``s`` is (n_sources, T), ``s_prime`` is (n_sources, C).
    """
    omega = np.asarray(omega, dtype=float)
    w = np.asarray(w, dtype=float)
    if omega.shape != w.shape or omega.ndim != 2:
        raise DimensionError("omega and w must be matching (n_sources, J) arrays")
    phases = np.asarray(phases, dtype=float)
    if phases.shape != (omega.shape[1],):
        raise DimensionError("phases must have one entry per feature")
    times = _check_times(times, warn_extrapolation)
    control_points = _check_times(control_points, warn_extrapolation)
    s, _ = _kernels.rff_forward(omega, w, phases, times)
    _, s_prime = _kernels.rff_forward(omega, w, phases, control_points)
    return SourceEval(s, s_prime)


def log_sigmoid(x):
    """log(1 / (1 + exp(-x))), stable for large |x|."""
    return -np.logaddexp(0.0, -np.asarray(x, dtype=float))


def monotonicity_logprob(s_prime, lam):
    """Log-probability that every derivative at the control points is positive.

    Each derivative contributes ``log sigmoid(lam * s')``; the sum is at most 0
    and tends to 0 as all derivatives grow.
    """
    if not lam > 0:
        raise ValueError("lam must be positive")
    return float(np.sum(log_sigmoid(lam * np.asarray(s_prime, dtype=float))))


def monotonicity_grad(s_prime, lam):
    # d/dx log sigmoid(lam x) = lam * sigmoid(-lam x)
    z = lam * np.asarray(s_prime, dtype=float)
    return lam * np.exp(log_sigmoid(-z))


def kl_omega(tp):
    """KL between the frequency posterior and its N(0, 1/l_n) prior."""
    # working in log space keeps the KL exactly zero when p_nj**2 * l_n == 1
    log_p2l = 2.0 * tp.log_p + tp.log_l[:, None]
    r2l = tp.r**2 * tp.l[:, None]
    return 0.5 * float(np.sum(np.exp(log_p2l) + r2l - 1.0 - log_p2l))


def kl_omega_grad(tp):
    """Gradients of :func:`kl_omega` w.r.t. ``(r, log_p, log_l)``."""
    l = tp.l[:, None]
    p2l = np.exp(2.0 * tp.log_p + tp.log_l[:, None])
    r2l = tp.r**2 * l
    g_r = tp.r * l
    g_log_p = p2l - 1.0
    g_log_l = 0.5 * np.sum(p2l + r2l - 1.0, axis=1)
    return g_r, g_log_p, g_log_l


def kl_weights(tp):
    s2 = tp.s**2
    return 0.5 * float(np.sum(s2 + tp.m**2 - 1.0 - np.log(s2)))


def kl_weights_grad(tp):
    """Gradients of :func:`kl_weights` w.r.t. ``(m, log_s)``."""
    return tp.m.copy(), tp.s**2 - 1.0
