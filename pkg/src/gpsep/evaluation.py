"""Scoring fitted models against ground truth and running the benchmark harnesses."""

from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linear_sum_assignment

from .ica import fastica, whiten
from .model import DimensionError, Hyperparams, TimeShifts
from .optim import FitConfig, fit
from .synth import generate
from .temporal import eval_sources

log = logging.getLogger(__name__)

__all__ = [
    "MatchResult",
    "RecoveryReport",
    "match_sources",
    "timeshift_correlation",
    "mean_sources",
    "temporal_comparison",
    "monotone_fraction",
    "evaluate_recovery",
    "model_selection_sweep",
    "write_sweep_csv",
    "ica_comparison",
    "N_RESAMPLE",
    "N_PROBES",
]

# Points of the common axis on which temporal sources are compared.
N_RESAMPLE = 100
# Probe points for the monotonicity check of fitted sources.
N_PROBES = 256
MAX_EXHAUSTIVE = 6


@dataclass(frozen=True)
class MatchResult:
    """Assignment of estimated components to true components.

    Attributes
    ----------
    permutation : ndarray of int
        ``permutation[i]`` is the estimated row matched to true row ``i``.
    signs : ndarray
        Sign of the correlation of each matched pair (+1 or -1).
    correlations : ndarray
        Absolute Pearson correlation of each matched pair.
    degenerate : ndarray of bool
        Pairs where a row is constant, so the correlation is undefined and
        reported as 0.
    """

    permutation: np.ndarray
    signs: np.ndarray
    correlations: np.ndarray
    degenerate: np.ndarray

    @property
    def total(self):
        return float(np.sum(self.correlations))


def _corr_matrix(a, b):
    """Pearson correlations between the rows of ``a`` and ``b``, with a constant-row mask."""
    a = a - a.mean(axis=1, keepdims=True)
    b = b - b.mean(axis=1, keepdims=True)
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    const = (na[:, None] == 0) | (nb[None, :] == 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        c = (a @ b.T) / np.outer(na, nb)
    c[const] = 0.0
    return np.clip(c, -1.0, 1.0), const


def match_sources(estimated, truth):
    """Match rows of ``estimated`` to rows of ``truth`` by absolute correlation.

    The assignment maximizes the total absolute Pearson correlation. It is
    found by enumeration for up to six components and by the Hungarian
    algorithm beyond that (both are exact).

    Parameters
    ----------
    estimated, truth : ndarray (Ns, K)

    Returns
    -------
    MatchResult
    """
    estimated = np.atleast_2d(np.asarray(estimated, dtype=float))
    truth = np.atleast_2d(np.asarray(truth, dtype=float))
    if estimated.shape != truth.shape:
        raise DimensionError(f"estimated {estimated.shape} and truth {truth.shape} differ in shape")
    c, const = _corr_matrix(estimated, truth)
    score = np.abs(c)
    n = truth.shape[0]
    if n <= MAX_EXHAUSTIVE:
        best, best_val = None, -np.inf
        for perm in itertools.permutations(range(n)):
            val = math.fsum(score[perm[i], i] for i in range(n))
            # strict '>' keeps the lexicographically first optimum
            if val > best_val:
                best, best_val = perm, val
        perm = np.array(best)
    else:
        rows, cols = linear_sum_assignment(-score)
        perm = np.empty(n, dtype=int)
        perm[cols] = rows
    idx = np.arange(n)
    matched = c[perm, idx]
    signs = np.where(matched < 0, -1.0, 1.0)
    return MatchResult(
        permutation=perm,
        signs=signs,
        correlations=np.abs(matched),
        degenerate=const[perm, idx],
    )


def timeshift_correlation(estimated, truth):
    """Pearson correlation between estimated model times and the true times.

    ``estimated`` may be a :class:`TimeShifts` (its squashed times are used)
    or an array of times already on [0, 1].
    """
    est = estimated.times if isinstance(estimated, TimeShifts) else np.asarray(estimated, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if est.shape != truth.shape:
        raise DimensionError(f"{est.shape[0]} estimated times for {truth.shape[0]} true times")
    if np.ptp(est) == 0 or np.ptp(truth) == 0:
        raise ValueError("correlation is undefined for constant times")
    return float(np.corrcoef(est, truth)[0, 1])


def mean_sources(state, times):
    """Sources evaluated at ``times`` with frequencies and weights at their posterior means.

    Returns ``(s, s_prime)`` where ``s_prime`` is the derivative at ``times``.
    """
    times = np.asarray(times, dtype=float)
    tp = state.temporal
    ev = eval_sources(tp.r, tp.m, state.phases, times, times, warn_extrapolation=False)
    return ev.s, ev.s_prime


def temporal_comparison(state, truth, n_points=N_RESAMPLE):
    """Compare fitted and true sources on the estimated time axis.

    The true times are regressed linearly on the estimated times of the
    same images. Both sets of sources are then evaluated on ``n_points``
    uniform points spanning the estimated times: the fitted ones directly,
    the true ones at the regressed true times.

    Returns
    -------
    MatchResult
    """
    tau = state.shifts.times
    lo, hi = float(tau.min()), float(tau.max())
    if hi <= lo:
        raise ValueError("estimated times are all equal")
    slope, intercept = np.polyfit(tau, truth.times, 1)
    grid = np.linspace(lo, hi, n_points)
    est, _ = mean_sources(state, grid)
    true = truth.sources(intercept + slope * grid)
    return match_sources(est, true)


def monotone_fraction(state, n_probes=N_PROBES, tol=1e-3):
    """Per source, the fraction of probe points in [0, 1] where ``S' >= -tol``."""
    _, sp = mean_sources(state, np.linspace(0.0, 1.0, n_probes))
    return np.mean(sp >= -tol, axis=1)


@dataclass(frozen=True)
class RecoveryReport:
    """How well a fit recovers the generating maps, sources and times."""

    maps: MatchResult
    temporal: MatchResult
    timeshift: float
    monotone: np.ndarray

    def passes(self, threshold=0.9):
        return bool(
            np.all(self.maps.correlations >= threshold)
            and np.all(self.temporal.correlations >= threshold)
            and abs(self.timeshift) >= threshold
        )

    def to_dict(self):
        return {
            "map_correlations": self.maps.correlations.tolist(),
            "map_permutation": self.maps.permutation.tolist(),
            "temporal_correlations": self.temporal.correlations.tolist(),
            "timeshift_correlation": self.timeshift,
            "monotone_fraction": self.monotone.tolist(),
        }


def evaluate_recovery(state, truth):
    return RecoveryReport(
        maps=match_sources(state.spatial.mu, truth.maps),
        temporal=temporal_comparison(state, truth),
        timeshift=timeshift_correlation(state.shifts, truth.times),
        monotone=monotone_fraction(state),
    )


def _cell_seed(fold, n_sources):
    # depends only on the cell, so the sweep order does not matter
    return [int(fold), int(n_sources), 7]


def model_selection_sweep(synth_cfg, n_folds, sources_range, hp=None, fit_cfg=None, report_mc=64):
    """Fit every candidate number of sources on ``n_folds`` synthetic datasets.

    Fold ``f`` uses the generator seed ``synth_cfg.seed + f``. Each
    (fold, Ns) cell is fitted independently with a seed derived from the
    cell alone, so the table does not depend on execution order. A cell
    whose fit fails records the error and the sweep carries on.

    Returns
    -------
    list of dict
        One row per cell with keys ``fold``, ``n_sources``, ``elbo``,
        ``map_norms`` and ``error``.
    """
    hp = hp or Hyperparams()
    fit_cfg = fit_cfg or FitConfig()
    rows = []
    for fold in range(n_folds):
        data, _ = generate(replace(synth_cfg, seed=synth_cfg.seed + fold))
        for ns in sources_range:
            row = {"fold": fold, "n_sources": int(ns), "elbo": float("nan"), "map_norms": [], "error": ""}
            try:
                seed = int(np.random.SeedSequence(_cell_seed(fold, ns)).generate_state(1)[0])
                cell_hp = replace(hp, n_sources=int(ns))
                tr = fit(data, cell_hp, replace(fit_cfg, seed=seed, report_mc=report_mc))
                row["elbo"] = tr.final.total
                row["map_norms"] = np.linalg.norm(tr.state.spatial.mu, axis=1).tolist()
            except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
                log.warning("sweep cell fold=%d Ns=%d failed: %s", fold, ns, exc)
                row["error"] = f"{type(exc).__name__}: {exc}"
            rows.append(row)
    return rows


def write_sweep_csv(path, rows):
    width = max((len(r["map_norms"]) for r in rows), default=0)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fold", "n_sources", "elbo"] + [f"norm_{i}" for i in range(width)] + ["error"])
        for r in rows:
            norms = [repr(float(v)) for v in r["map_norms"]] + [""] * (width - len(r["map_norms"]))
            w.writerow([r["fold"], r["n_sources"], repr(float(r["elbo"]))] + norms + [r["error"]])


@dataclass
class IcaComparison:
    """Source recovery of the model and of FastICA on one dataset with known times."""

    model_temporal: MatchResult
    ica_temporal: MatchResult
    model_maps: MatchResult
    ica_maps: MatchResult
    extra: dict = field(default_factory=dict)

    @property
    def model_mean(self):
        return float(np.mean(self.model_temporal.correlations))

    @property
    def ica_mean(self):
        return float(np.mean(self.ica_temporal.correlations))

    def to_dict(self):
        return {
            "model_temporal": self.model_temporal.correlations.tolist(),
            "ica_temporal": self.ica_temporal.correlations.tolist(),
            "model_maps": self.model_maps.correlations.tolist(),
            "ica_maps": self.ica_maps.correlations.tolist(),
            "model_mean": self.model_mean,
            "ica_mean": self.ica_mean,
            **self.extra,
        }


def ica_comparison(data, truth, hp=None, fit_cfg=None, ica_seed=0):
    """Fit the model (times held at their observed values) and FastICA to the same data.

    Temporal sources are scored at the images' true times; the model uses
    its posterior-mean sources there, FastICA its per-image mixing
    coefficients.
    """
    if data.observed_times is None:
        raise ValueError("the comparison needs data with observed times")
    hp = hp or Hyperparams()
    fit_cfg = replace(fit_cfg or FitConfig(), fix_times=True)
    tr = fit(data, hp, fit_cfg)
    true_s = truth.sources()
    model_s, _ = mean_sources(tr.state, data.observed_times)
    res = fastica(whiten(data.values, hp.n_sources), seed=ica_seed)
    return IcaComparison(
        model_temporal=match_sources(model_s, true_s),
        ica_temporal=match_sources(res.courses.T, true_s),
        model_maps=match_sources(tr.state.spatial.mu, truth.maps),
        ica_maps=match_sources(res.maps, truth.maps),
        extra={"ica_converged": res.converged, "model_elbo": tr.final.total},
    )
