"""Stochastic evidence lower bound of the factorization model."""

from __future__ import annotations

import math

import numpy as np

from .model import DimensionError, ElboBreakdown, NoiseDraws
from .spatial import kernel_for, kl_spatial, sample_maps
from .temporal import (
    eval_sources,
    kl_omega,
    kl_weights,
    monotonicity_logprob,
    reparam_omega,
    reparam_weights,
)

__all__ = ["log_likelihood", "elbo", "draw_noise"]

LOG_2PI = math.log(2.0 * math.pi)


def log_likelihood(data, s_at_subjects, a, sigma):
    """Gaussian log-likelihood of ``data.values`` under mean ``s.T @ a`` and noise ``sigma``.

    Parameters
    ----------
    data : DataMatrix or ndarray
        Observations (P, F).
    s_at_subjects : ndarray, shape (n_sources, P)
    a : ndarray, shape (n_sources, F)
    sigma : float
    """
    y = data.values if hasattr(data, "values") else np.asarray(data, dtype=float)
    s_at_subjects = np.asarray(s_at_subjects, dtype=float)
    a = np.asarray(a, dtype=float)
    P, F = y.shape
    if s_at_subjects.shape[1] != P or a.shape[1] != F or s_at_subjects.shape[0] != a.shape[0]:
        raise DimensionError("sources, maps and data shapes are inconsistent")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    r = y - s_at_subjects.T @ a
    return -0.5 * P * F * (LOG_2PI + 2.0 * math.log(sigma)) - float(np.sum(r * r)) / (2.0 * sigma**2)


def draw_noise(rng, state, n):
    """``n`` independent noise draws shaped for ``state``."""
    n_src, J = state.temporal.r.shape
    F = state.spatial.mu.shape[1]
    return [NoiseDraws.sample(rng, n_src, J, F) for _ in range(n)]


def elbo(state, data, hp, draws):
    """Evaluate the bound for ``state`` with the given reparameterization draws.

    The likelihood and constraint expectations are averaged over ``draws``
    (the same frequency/weight draws feed both); the three KL terms are exact.
    The average uses ``math.fsum`` so the result does not depend on the order
    of the draws.
    """
    if len(draws) < 1:
        raise ValueError("need at least one noise draw")
    tp, sp = state.temporal, state.spatial
    kf = kernel_for(sp, hp.jitter)
    times = state.shifts.times
    lls, cons = [], []
    for d in draws:
        omega = reparam_omega(tp, d.zeta)
        w = reparam_weights(tp, d.epsilon)
        ev = eval_sources(omega, w, state.phases, times, hp.control_points, warn_extrapolation=False)
        a = sample_maps(sp, kf, d.kappa)
        lls.append(log_likelihood(data, ev.s, a, state.sigma))
        cons.append(monotonicity_logprob(ev.s_prime, hp.lam))
    n = len(draws)
    return ElboBreakdown(
        loglik=math.fsum(lls) / n,
        constraint=math.fsum(cons) / n,
        kl_spatial=kl_spatial(sp, kf),
        kl_omega=kl_omega(tp),
        kl_weights=kl_weights(tp),
    )
