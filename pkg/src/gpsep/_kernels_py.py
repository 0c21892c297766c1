"""Pure numpy versions of the per-iteration kernels.

These are the reference implementations; the compiled module ``_core`` must
agree with them to round-off.
"""

import numpy as np


def rff_forward(omega, w, phases, times):
    """Source values and their time-derivatives at ``times``.

    Returns two (n_sources, T) arrays.
    """
    J = omega.shape[1]
    c = np.sqrt(2.0 / J)
    theta = omega[:, :, None] * times[None, None, :] + phases[None, :, None]
    values = c * np.einsum("nj,njt->nt", w, np.cos(theta))
    deriv = -c * np.einsum("nj,njt->nt", w * omega, np.sin(theta))
    return values, deriv


def rff_backward(omega, w, phases, times, g_val=None, g_der=None):
    """Pull gradients on values and derivatives back to (omega, w, times).

    ``g_val`` and ``g_der`` are (n_sources, T) upstream gradients; None means
    zero.
    """
    n_src, J = omega.shape
    T = times.shape[0]
    c = np.sqrt(2.0 / J)
    if g_val is None:
        g_val = np.zeros((n_src, T))
    if g_der is None:
        g_der = np.zeros((n_src, T))
    theta = omega[:, :, None] * times[None, None, :] + phases[None, :, None]
    cos, sin = np.cos(theta), np.sin(theta)
    tt = times[None, None, :]
    g_w = c * np.einsum("nt,njt->nj", g_val, cos) - c * np.einsum("nt,njt->nj", g_der, omega[:, :, None] * sin)
    g_omega = -c * np.einsum("nt,njt->nj", g_val, w[:, :, None] * tt * sin) - c * np.einsum(
        "nt,njt->nj", g_der, w[:, :, None] * (sin + omega[:, :, None] * tt * cos)
    )
    deriv = -c * np.einsum("nj,njt->nt", w * omega, sin)
    second = -c * np.einsum("nj,njt->nt", w * omega**2, cos)
    g_times = np.sum(g_val * deriv + g_der * second, axis=0)
    return g_omega, g_w, g_times


def lik_residual_grad(y, s, a, inv_var, n_partitions=8, n_threads=1):
    """Squared residual norm of ``y - s.T @ a`` and its pullbacks.

    Returns ``(sq, g_s, g_a)`` with ``g_s = inv_var * a @ r.T`` and
    ``g_a = inv_var * s @ r``, the gradients of ``-sq * inv_var / 2``.
    """
    r = y - s.T @ a
    sq = float(np.sum(r * r))
    g_s = (a @ r.T) * inv_var
    g_a = (s @ r) * inv_var
    return sq, g_s, g_a


def sqrt_grad_contract(gt, kt, q, drow, dcol, row_vals, col_vals):
    """Row and column parts of the log-beta derivative of ``sum g . Sigma^(1/2) kappa``.

    ``gt`` and ``kt`` are (n_sources, H, W) eigenbasis coordinates of the
    upstream gradient and the noise; ``q`` holds the square roots of the
    eigenvalues of Sigma.
    """
    cross_r = np.einsum("nij,nkj->ikj", gt, kt)
    phi_r = 1.0 / (q[:, None, :] + q[None, :, :])
    term_r = np.einsum("ik,ikj,j->", drow, cross_r * phi_r, col_vals)
    cross_c = np.einsum("nij,nil->ijl", gt, kt)
    phi_c = 1.0 / (q[:, :, None] + q[:, None, :])
    term_c = np.einsum("jl,ijl,i->", dcol, cross_c * phi_c, row_vals)
    return float(term_r), float(term_c)
