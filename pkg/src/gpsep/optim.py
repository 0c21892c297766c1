"""Gradient ascent on the lower bound.

Gradients are derived by hand term by term: the closed-form KLs differentiate
directly, and the Monte Carlo terms are pulled back through the three
reparameterizations, the cosine feature map, the logistic time map and the
matrix square root of the spatial covariance. ``finite_difference_grad`` is
the independent check.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .elbo import LOG_2PI, draw_noise, elbo
from .model import (
    DataMatrix,
    ElboBreakdown,
    GridGeometry,
    Hyperparams,
    ModelState,
    NoiseDraws,
    SpatialPosterior,
    TemporalPosterior,
    TimeShifts,
    init_model,
)
from .spatial import kernel_for, kl_spatial, kl_spatial_grad, sample_maps, sqrt_apply_grad
from .temporal import (
    kl_omega,
    kl_omega_grad,
    kl_weights,
    kl_weights_grad,
    monotonicity_grad,
    monotonicity_logprob,
    reparam_omega,
    reparam_weights,
)

__all__ = [
    "FitConfig",
    "FitTrace",
    "FitDivergedError",
    "Adam",
    "elbo_and_grad",
    "grad_elbo",
    "finite_difference_grad",
    "gradcheck",
    "gradcheck_instance",
    "fit",
]

log = logging.getLogger(__name__)

# Posterior standard deviations are floored here (in value, not gradient).
STD_FLOOR = 1e-6


class FitDivergedError(FloatingPointError):
    def __init__(self, iteration, term):
        super().__init__(f"non-finite ELBO at iteration {iteration} (term: {term})")
        self.iteration = iteration
        self.term = term


@dataclass(frozen=True)
class FitConfig:
    """Optimizer settings.

    The step size decays geometrically from ``learning_rate`` to ``lr_final``
    over ``max_iters`` iterations (constant when ``lr_final`` is None). The
    run is declared converged once ``patience`` consecutive windows of
    ``window`` iterations each improve the mean bound by less than ``tol``
    relative to the previous window. ``fix_times`` keeps the time-shifts at
    their initial values (use it when the data carries known observation
    times). ``report_mc`` is the number of draws used for the final reported
    bound.
    """

    max_iters: int = 40000
    learning_rate: float = 0.03
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    window: int = 200
    tol: float = 1e-6
    seed: int = 0
    learn_sigma: bool = False
    fix_times: bool = False
    report_mc: int = 64
    lr_final: float | None = 1e-3
    patience: int = 10

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        for b in (self.beta1, self.beta2):
            if not 0 < b < 1:
                raise ValueError("moment decay rates must lie in (0, 1)")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.lr_final is not None and not self.lr_final > 0:
            raise ValueError("lr_final must be positive")

    def learning_rate_at(self, it):
        """Step size at iteration ``it``: geometric decay to ``lr_final`` over ``max_iters``, if set."""
        if self.lr_final is None or self.max_iters == 1 or self.learning_rate == 0:
            return self.learning_rate
        return self.learning_rate * (self.lr_final / self.learning_rate) ** (it / (self.max_iters - 1))

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class FitTrace:
    breakdowns: list = field(default_factory=list)
    state: ModelState | None = None
    converged: bool = False
    wall_time: float = 0.0
    final: ElboBreakdown | None = None
    degeneracies: int = 0

    @property
    def totals(self):
        return np.array([b.total for b in self.breakdowns])

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write("iteration," + ",".join(ElboBreakdown.FIELDS) + "\n")
            for i, b in enumerate(self.breakdowns):
                fh.write(f"{i}," + ",".join(repr(float(v)) for v in b.as_row()) + "\n")


class Adam:
    """Bias-corrected adaptive moment ascent on a flat parameter vector."""

    def __init__(self, size, learning_rate=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = learning_rate
        self.b1 = beta1
        self.b2 = beta2
        self.eps = eps
        self.t = 0
        self.m = np.zeros(size)
        self.v = np.zeros(size)

    def step(self, x, grad):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad**2
        m_hat = self.m / (1 - self.b1**self.t)
        v_hat = self.v / (1 - self.b2**self.t)
        return x + self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def elbo_and_grad(state, data, hp, draws):
    """Bound and its gradient w.r.t. every unconstrained parameter of ``state``.

    Returns
    -------
    ElboBreakdown, ModelState
        The gradient is returned in the same container as the state; every
        field holds d(ELBO)/d(field) (log-space fields differentiate w.r.t. the
        log).
    """
    if len(draws) < 1:
        raise ValueError("need at least one noise draw")
    tp, sp = state.temporal, state.spatial
    y = data.values
    P, F = y.shape
    kf = kernel_for(sp, hp.jitter)
    p, s = tp.p, tp.s
    times = state.shifts.times
    cp = np.asarray(hp.control_points)
    sigma = state.sigma
    inv_var = 1.0 / sigma**2

    g_r = np.zeros_like(tp.r)
    g_log_p = np.zeros_like(tp.r)
    g_m = np.zeros_like(tp.r)
    g_log_s = np.zeros_like(tp.r)
    g_mu = np.zeros_like(sp.mu)
    g_times = np.zeros(P)
    g_log_alpha = 0.0
    g_log_beta = 0.0
    g_log_sigma = 0.0
    lls, cons = [], []

    for d in draws:
        omega = reparam_omega(tp, d.zeta)
        w = reparam_weights(tp, d.epsilon)
        a = sample_maps(sp, kf, d.kappa)
        s_val, _ = _kernels.rff_forward(omega, w, state.phases, times)
        _, s_prime = _kernels.rff_forward(omega, w, state.phases, cp)

        sq, g_s, g_a = _kernels.lik_residual_grad(y, s_val, a, inv_var)
        lls.append(-0.5 * P * F * (LOG_2PI + 2.0 * math.log(sigma)) - 0.5 * sq * inv_var)
        cons.append(monotonicity_logprob(s_prime, hp.lam))
        g_sp = monotonicity_grad(s_prime, hp.lam)

        go1, gw1, gt1 = _kernels.rff_backward(omega, w, state.phases, times, g_val=g_s)
        go2, gw2, _ = _kernels.rff_backward(omega, w, state.phases, cp, g_der=g_sp)
        g_omega = go1 + go2
        g_w = gw1 + gw2
        g_r += g_omega
        g_log_p += g_omega * d.zeta * p
        g_m += g_w
        g_log_s += g_w * d.epsilon * s
        g_times += gt1
        g_mu += g_a
        ga, gb = sqrt_apply_grad(kf, d.kappa, g_a)
        g_log_alpha += ga
        g_log_beta += gb
        g_log_sigma += -P * F + sq * inv_var

    n = len(draws)
    kr, kp, kl_ = kl_omega_grad(tp)
    km, ks = kl_weights_grad(tp)
    kmu, kla, klb = kl_spatial_grad(sp, kf)
    grad = ModelState(
        temporal=TemporalPosterior(
            g_r / n - kr, g_log_p / n - kp, g_m / n - km, g_log_s / n - ks, -kl_
        ),
        spatial=SpatialPosterior(g_mu / n - kmu, g_log_alpha / n - kla, g_log_beta / n - klb, sp.grid),
        shifts=TimeShifts(g_times / n * times * (1.0 - times)),
        phases=np.zeros_like(state.phases),
        log_sigma=g_log_sigma / n,
        seed=state.seed,
    )
    br = ElboBreakdown(
        loglik=math.fsum(lls) / n,
        constraint=math.fsum(cons) / n,
        kl_spatial=kl_spatial(sp, kf),
        kl_omega=kl_omega(tp),
        kl_weights=kl_weights(tp),
    )
    return br, grad


def grad_elbo(state, data, hp, draws):
    """Gradient of :func:`gpsep.elbo.elbo` with the same draws."""
    return elbo_and_grad(state, data, hp, draws)[1]


def finite_difference_grad(fun, x, h=1e-5):
    """Central differences of scalar ``fun`` at ``x``."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (fun(xp) - fun(xm)) / (2.0 * h)
    return g


@dataclass(frozen=True)
class GradCheck:
    names: list
    analytic: np.ndarray
    numeric: np.ndarray
    abs_err: np.ndarray
    rel_err: np.ndarray
    abs_floor: float

    @property
    def max_rel_err(self):
        """Largest relative error among coordinates above the absolute floor."""
        big = self.abs_err > self.abs_floor
        return float(self.rel_err[big].max()) if big.any() else 0.0

    def passed(self, rel_tol=1e-5):
        return bool(np.all((self.abs_err <= self.abs_floor) | (self.rel_err < rel_tol)))

    def per_block(self):
        out = {}
        for i, name in enumerate(self.names):
            block = name.split("[")[0]
            big = self.abs_err[i] > self.abs_floor
            rel = self.rel_err[i] if big else 0.0
            out[block] = max(out.get(block, 0.0), float(rel))
        return out


def gradcheck(state, data, hp, draws, h=1e-5, abs_floor=1e-8):
    """Compare :func:`grad_elbo` with central differences of :func:`elbo`, coordinate by coordinate."""
    x0 = state.to_vector()
    analytic = grad_elbo(state, data, hp, draws).to_vector()

    def total(x):
        return elbo(state.with_vector(x), data, hp, draws).total

    numeric = finite_difference_grad(total, x0, h)
    abs_err = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    rel_err = np.where(scale > 0, abs_err / np.where(scale > 0, scale, 1.0), 0.0)
    names = []
    for block, sl in state.block_slices().items():
        names += [f"{block}[{i}]" for i in range(sl.stop - sl.start)]
    return GradCheck(names, analytic, numeric, abs_err, rel_err, abs_floor)


GRADCHECK_INSTANCES = {
    # name: (P, H, W, n_sources, J, n_control_points, n_draws)
    "tiny": (6, 3, 3, 2, 3, 8, 2),
    "small": (12, 4, 5, 3, 6, 16, 3),
}


def gradcheck_instance(name="tiny", seed=3):
    """A reproducible random problem for :func:`gradcheck`.

    The state is the initial state with every coordinate perturbed, so no
    block sits at a symmetric point where errors could cancel.

    Returns
    -------
    state, data, hp, draws
    """
    if name not in GRADCHECK_INSTANCES:
        raise ValueError(f"unknown instance {name!r}; choose from {sorted(GRADCHECK_INSTANCES)}")
    P, H, W, n_src, J, C, n_draws = GRADCHECK_INSTANCES[name]
    rng = np.random.default_rng(seed)
    data = DataMatrix(rng.standard_normal((P, H * W)), grid=GridGeometry(H, W))
    hp = Hyperparams(
        sigma=0.7, lam=3.0, n_sources=n_src, n_features_rff=J, control_points=np.linspace(0.0, 1.0, C)
    )
    state = init_model(data, hp, seed=1)
    x = state.to_vector()
    state = state.with_vector(x + 0.3 * rng.standard_normal(x.size))
    draws = [NoiseDraws.sample(rng, n_src, J, H * W) for _ in range(n_draws)]
    return state, data, hp, draws


def _mask(state, cfg):
    mask = np.ones_like(state.to_vector())
    sl = state.block_slices()
    if not cfg.learn_sigma:
        mask[sl["log_sigma"]] = 0.0
    if cfg.fix_times:
        mask[sl["shifts.t"]] = 0.0
    return mask


def fit(data, hp, cfg=None, state=None, callback=None):
    """Maximize the bound from :func:`gpsep.model.init_model` (or ``state``).

    One fresh set of ``hp.n_mc`` noise draws is used per iteration. The run
    stops after ``cfg.max_iters`` iterations or when, for ``cfg.patience``
    consecutive checks, the mean bound over the last ``cfg.window``
    iterations improves on the previous window by less than ``cfg.tol`` in
    relative terms.

    Raises
    ------
    FitDivergedError
        If any term of the bound becomes non-finite.
    """
    cfg = cfg or FitConfig()
    t_start = time.perf_counter()
    if state is None:
        state = init_model(data, hp, seed=cfg.seed)
    rng = np.random.default_rng([cfg.seed, 1])
    mask = _mask(state, cfg)
    x = state.to_vector()
    opt = Adam(x.size, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    sl = state.block_slices()
    floor = math.log(STD_FLOOR)
    trace = FitTrace()
    totals = []
    stalled = 0
    for it in range(cfg.max_iters):
        draws = draw_noise(rng, state, hp.n_mc)
        try:
            br, grad = elbo_and_grad(state, data, hp, draws)
        except (ZeroDivisionError, OverflowError) as exc:
            raise FitDivergedError(it, f"evaluation failed: {exc}") from exc
        if not math.isfinite(br.total):
            bad = next((k for k in ElboBreakdown.FIELDS if not math.isfinite(getattr(br, k))), "total")
            raise FitDivergedError(it, bad)
        trace.breakdowns.append(br)
        totals.append(br.total)
        g = grad.to_vector() * mask
        opt.lr = cfg.learning_rate_at(it)
        x = opt.step(x, g) * mask + x * (1.0 - mask)
        for name in ("temporal.log_p", "temporal.log_s"):
            low = x[sl[name]] < floor
            if low.any():
                trace.degeneracies += int(low.sum())
                x[sl[name]] = np.where(low, floor, x[sl[name]])
        state = state.with_vector(x)
        if callback is not None:
            callback(it, br, state)
        n = len(totals)
        if n >= 2 * cfg.window and n % cfg.window == 0:
            recent = math.fsum(totals[-cfg.window:]) / cfg.window
            before = math.fsum(totals[-2 * cfg.window:-cfg.window]) / cfg.window
            stalled = stalled + 1 if recent - before < cfg.tol * abs(before) else 0
            if stalled >= cfg.patience:
                trace.converged = True
                break
    trace.state = state
    trace.final = elbo(state, data, hp, draw_noise(rng, state, cfg.report_mc))
    trace.wall_time = time.perf_counter() - t_start
    log.info(
        "fit: %d iterations, final ELBO %.6g, converged=%s, %.1fs",
        len(trace.breakdowns), trace.final.total, trace.converged, trace.wall_time,
    )
    return trace
