"""Model state, hyperparameters and checkpointing.

Every positive quantity (posterior standard deviations, prior precisions,
kernel amplitude/lengthscale, noise level) is stored as its logarithm so that
any real-valued update keeps it inside its domain.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

__all__ = [
    "DimensionError",
    "GridGeometry",
    "DataMatrix",
    "TemporalPosterior",
    "SpatialPosterior",
    "TimeShifts",
    "Hyperparams",
    "NoiseDraws",
    "ElboBreakdown",
    "ModelState",
    "squash",
    "inverse_squash",
    "init_model",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_FORMAT = "gpsep-checkpoint"
CHECKPOINT_VERSION = 1

# Observed times are clipped away from {0, 1} before the logit.
TIME_CLIP = 1e-6


class DimensionError(ValueError):
    """Raised when array shapes disagree with each other or with the model."""


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def squash(t):
    """Logistic map from unconstrained time-shifts to model time in (0, 1)."""
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def inverse_squash(x):
    x = np.clip(np.asarray(x, dtype=float), TIME_CLIP, 1.0 - TIME_CLIP)
    return np.log(x) - np.log1p(-x)


@dataclass(frozen=True)
class GridGeometry:
    """Layout of the feature axis.

    A lattice of ``height x width`` cells flattened in row-major order, or a
    flat (non-spatial) axis when ``height`` and ``width`` are None.
    """

    height: int | None = None
    width: int | None = None

    def __post_init__(self):
        if (self.height is None) != (self.width is None):
            raise DimensionError("grid needs both height and width, or neither")
        if self.height is not None and (self.height < 1 or self.width < 1):
            raise DimensionError("grid dimensions must be positive")

    @classmethod
    def lattice(cls, height, width):
        return cls(int(height), int(width))

    @classmethod
    def flat(cls):
        return cls()

    @property
    def is_lattice(self):
        return self.height is not None

    def n_features(self):
        return None if not self.is_lattice else self.height * self.width

    def to_dict(self):
        return {"height": self.height, "width": self.width}

    @classmethod
    def from_dict(cls, d):
        if d is None:
            return cls()
        return cls(d.get("height"), d.get("width"))


@dataclass(frozen=True)
class DataMatrix:
    """Observed images, one subject per row, with optional observation times."""

    values: np.ndarray
    observed_times: np.ndarray | None = None
    grid: GridGeometry = field(default_factory=GridGeometry)

    def __post_init__(self):
        values = _frozen(self.values)
        if values.ndim != 2:
            raise DimensionError(f"values must be 2-D, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("values contain non-finite entries")
        object.__setattr__(self, "values", values)
        if self.grid.is_lattice and self.grid.n_features() != values.shape[1]:
            raise DimensionError(
                f"grid {self.grid.height}x{self.grid.width} does not match "
                f"{values.shape[1]} features"
            )
        if self.observed_times is not None:
            times = _frozen(self.observed_times)
            if times.shape != (values.shape[0],):
                raise DimensionError(
                    f"observed_times has shape {times.shape}, expected ({values.shape[0]},)"
                )
            if not np.all(np.isfinite(times)):
                raise ValueError("observed_times contain non-finite entries")
            object.__setattr__(self, "observed_times", times)

    @property
    def n_subjects(self):
        return self.values.shape[0]

    @property
    def n_features(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class TemporalPosterior:
    """Variational parameters of the frequencies and weights of every source.

    Arrays ``r``, ``log_p``, ``m`` and ``log_s`` are ``(n_sources, n_features)``;
    ``log_l`` holds one log prior precision per source.
    """

    r: np.ndarray
    log_p: np.ndarray
    m: np.ndarray
    log_s: np.ndarray
    log_l: np.ndarray

    def __post_init__(self):
        for name in ("r", "log_p", "m", "log_s", "log_l"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        shape = self.r.shape
        if len(shape) != 2:
            raise DimensionError("temporal parameters must be (n_sources, J) arrays")
        for name in ("log_p", "m", "log_s"):
            if getattr(self, name).shape != shape:
                raise DimensionError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if self.log_l.shape != (shape[0],):
            raise DimensionError(f"log_l has shape {self.log_l.shape}, expected ({shape[0]},)")

    @property
    def p(self):
        return np.exp(self.log_p)

    @property
    def s(self):
        return np.exp(self.log_s)

    @property
    def l(self):  # noqa: E743
        return np.exp(self.log_l)

    @property
    def n_sources(self):
        return self.r.shape[0]

    @property
    def n_rff(self):
        return self.r.shape[1]


@dataclass(frozen=True)
class SpatialPosterior:
    mu: np.ndarray
    log_alpha: float
    log_beta: float
    grid: GridGeometry = field(default_factory=GridGeometry)

    def __post_init__(self):
        mu = _frozen(self.mu)
        if mu.ndim != 2:
            raise DimensionError("mu must be (n_sources, F)")
        if self.grid.is_lattice and self.grid.n_features() != mu.shape[1]:
            raise DimensionError("mu columns do not match the grid")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "log_alpha", float(self.log_alpha))
        object.__setattr__(self, "log_beta", float(self.log_beta))

    @property
    def alpha(self):
        return float(np.exp(self.log_alpha))

    @property
    def beta(self):
        return float(np.exp(self.log_beta))


@dataclass(frozen=True)
class TimeShifts:
    t: np.ndarray

    def __post_init__(self):
        t = _frozen(self.t)
        if t.ndim != 1 or not np.all(np.isfinite(t)):
            raise ValueError("time-shifts must be a finite vector")
        object.__setattr__(self, "t", t)

    @property
    def times(self):
        """Model times in (0, 1)."""
        return squash(self.t)


@dataclass(frozen=True)
class Hyperparams:
    """Fixed quantities of the model.

    ``control_points`` are the times in [0, 1] where source derivatives enter
    the monotonicity likelihood. ``lam`` is its sharpness.
    """

    sigma: float = 0.05
    lam: float = 1e5
    n_sources: int = 3
    n_features_rff: int = 20
    control_points: np.ndarray = field(default_factory=lambda: np.linspace(0.0, 1.0, 32))
    n_mc: int = 1
    jitter: float = 1e-6

    def __post_init__(self):
        cp = _frozen(self.control_points)
        object.__setattr__(self, "control_points", cp)
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if int(self.n_sources) < 1:
            raise ValueError("n_sources must be >= 1")
        if int(self.n_features_rff) < 1:
            raise ValueError("n_features_rff must be >= 1")
        if int(self.n_mc) < 1:
            raise ValueError("n_mc must be >= 1")
        if self.jitter < 0:
            raise ValueError("jitter must be non-negative")
        if cp.ndim != 1 or cp.size < 2:
            raise ValueError("need at least two control points")
        if np.any(np.diff(cp) < 0) or cp[0] < 0 or cp[-1] > 1:
            raise ValueError("control points must be sorted within [0, 1]")
        object.__setattr__(self, "n_sources", int(self.n_sources))
        object.__setattr__(self, "n_features_rff", int(self.n_features_rff))
        object.__setattr__(self, "n_mc", int(self.n_mc))

    def to_dict(self):
        return {
            "sigma": self.sigma,
            "lam": self.lam,
            "n_sources": self.n_sources,
            "n_features_rff": self.n_features_rff,
            "control_points": self.control_points.tolist(),
            "n_mc": self.n_mc,
            "jitter": self.jitter,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "control_points" in d:
            d["control_points"] = np.asarray(d["control_points"], dtype=float)
        return cls(**d)


@dataclass(frozen=True)
class NoiseDraws:
    """Standard-normal draws for one Monte Carlo sample of the bound."""

    zeta: np.ndarray
    epsilon: np.ndarray
    kappa: np.ndarray

    def __post_init__(self):
        for name in ("zeta", "epsilon", "kappa"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if self.zeta.shape != self.epsilon.shape:
            raise DimensionError("zeta and epsilon must share a shape")
        if self.kappa.shape[0] != self.zeta.shape[0]:
            raise DimensionError("kappa must have one row per source")

    @classmethod
    def sample(cls, rng, n_sources, n_rff, n_features):
        return cls(
            rng.standard_normal((n_sources, n_rff)),
            rng.standard_normal((n_sources, n_rff)),
            rng.standard_normal((n_sources, n_features)),
        )

    @classmethod
    def zeros(cls, n_sources, n_rff, n_features):
        return cls(
            np.zeros((n_sources, n_rff)),
            np.zeros((n_sources, n_rff)),
            np.zeros((n_sources, n_features)),
        )


@dataclass(frozen=True)
class ElboBreakdown:
    loglik: float
    constraint: float
    kl_spatial: float
    kl_omega: float
    kl_weights: float

    @property
    def total(self):
        return self.loglik + self.constraint - self.kl_spatial - self.kl_omega - self.kl_weights

    def as_row(self):
        return [self.loglik, self.constraint, self.kl_spatial, self.kl_omega, self.kl_weights, self.total]

    FIELDS = ("loglik", "constraint", "kl_spatial", "kl_omega", "kl_weights", "total")


@dataclass(frozen=True)
class ModelState:
    """Complete variational state of a fit.

    ``phases`` are the fixed random phases of the cosine features, drawn once
    at initialization. ``log_sigma`` is only optimized when the fit asks for it.
    """

    temporal: TemporalPosterior
    spatial: SpatialPosterior
    shifts: TimeShifts
    phases: np.ndarray
    log_sigma: float
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "phases", _frozen(self.phases))
        object.__setattr__(self, "log_sigma", float(self.log_sigma))
        if self.phases.shape != (self.temporal.n_rff,):
            raise DimensionError("phases must have one entry per random feature")
        if self.spatial.mu.shape[0] != self.temporal.n_sources:
            raise DimensionError("spatial and temporal posteriors disagree on n_sources")

    @property
    def sigma(self):
        return float(np.exp(self.log_sigma))

    # Flat parameter vector in a fixed block order; used by the optimizer and
    # the finite-difference oracle.
    BLOCKS = (
        "temporal.r",
        "temporal.log_p",
        "temporal.m",
        "temporal.log_s",
        "temporal.log_l",
        "spatial.mu",
        "spatial.log_alpha",
        "spatial.log_beta",
        "shifts.t",
        "log_sigma",
    )

    def blocks(self):
        tp, sp = self.temporal, self.spatial
        return {
            "temporal.r": tp.r,
            "temporal.log_p": tp.log_p,
            "temporal.m": tp.m,
            "temporal.log_s": tp.log_s,
            "temporal.log_l": tp.log_l,
            "spatial.mu": sp.mu,
            "spatial.log_alpha": np.array([sp.log_alpha]),
            "spatial.log_beta": np.array([sp.log_beta]),
            "shifts.t": self.shifts.t,
            "log_sigma": np.array([self.log_sigma]),
        }

    def block_slices(self):
        out, start = {}, 0
        for name, arr in self.blocks().items():
            out[name] = slice(start, start + arr.size)
            start += arr.size
        return out

    def to_vector(self):
        return np.concatenate([np.ravel(a) for a in self.blocks().values()])

    def with_vector(self, vec):
        """Return a copy whose parameters are read from ``vec`` (same layout)."""
        vec = np.asarray(vec, dtype=float)
        b = self.blocks()
        sl = self.block_slices()
        if vec.shape != (sl["log_sigma"].stop,):
            raise DimensionError("parameter vector has the wrong length")
        get = {k: vec[sl[k]].reshape(b[k].shape) for k in b}
        tp = TemporalPosterior(
            get["temporal.r"], get["temporal.log_p"], get["temporal.m"],
            get["temporal.log_s"], get["temporal.log_l"],
        )
        sp = SpatialPosterior(
            get["spatial.mu"], get["spatial.log_alpha"][0], get["spatial.log_beta"][0], self.spatial.grid
        )
        return replace(
            self, temporal=tp, spatial=sp, shifts=TimeShifts(get["shifts.t"]),
            log_sigma=get["log_sigma"][0],
        )

    def to_dict(self):
        tp, sp = self.temporal, self.spatial
        return {
            "temporal": {k: getattr(tp, k).tolist() for k in ("r", "log_p", "m", "log_s", "log_l")},
            "spatial": {
                "mu": sp.mu.tolist(),
                "log_alpha": sp.log_alpha,
                "log_beta": sp.log_beta,
                "grid": sp.grid.to_dict(),
            },
            "shifts": {"t": self.shifts.t.tolist()},
            "phases": self.phases.tolist(),
            "log_sigma": self.log_sigma,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        t = d["temporal"]
        s = d["spatial"]
        f = lambda x: np.asarray(x, dtype=float)  # noqa: E731
        n_src = len(t["r"])
        mu = f(s["mu"]).reshape(n_src, -1)
        return cls(
            temporal=TemporalPosterior(
                f(t["r"]).reshape(n_src, -1), f(t["log_p"]).reshape(n_src, -1),
                f(t["m"]).reshape(n_src, -1), f(t["log_s"]).reshape(n_src, -1), f(t["log_l"]),
            ),
            spatial=SpatialPosterior(mu, s["log_alpha"], s["log_beta"], GridGeometry.from_dict(s["grid"])),
            shifts=TimeShifts(f(d["shifts"]["t"])),
            phases=f(d["phases"]),
            log_sigma=d["log_sigma"],
            seed=int(d["seed"]),
        )


def init_model(data, hp, seed=0):
    """Initial variational state for ``data`` under ``hp``.

    Frequencies start at the prior (r=0, p=1, l=1), weights at small random
    means with unit standard deviation, maps at zero with alpha=1 and a two
    cell lengthscale. Time-shifts start at the observed times when the data
    carries them and at zero (model time 0.5) otherwise.
    """
    n_src, J = hp.n_sources, hp.n_features_rff
    P, F = data.values.shape
    if data.grid.is_lattice and data.grid.n_features() != F:
        raise DimensionError("data grid does not match its feature count")
    rng = np.random.default_rng(seed)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=J)
    m = 0.01 * rng.standard_normal((n_src, J))
    temporal = TemporalPosterior(
        r=np.zeros((n_src, J)),
        log_p=np.zeros((n_src, J)),
        m=m,
        log_s=np.zeros((n_src, J)),
        log_l=np.zeros(n_src),
    )
    spatial = SpatialPosterior(np.zeros((n_src, F)), 0.0, np.log(2.0), data.grid)
    if data.observed_times is not None:
        t0 = inverse_squash(data.observed_times)
    else:
        t0 = np.zeros(P)
    return ModelState(temporal, spatial, TimeShifts(t0), phases, np.log(hp.sigma), seed=int(seed))


def save_checkpoint(path, state, hp, extra=None):
    """Write ``state`` and ``hp`` as one JSON document.

    Floats are written with ``repr`` precision, so loading reproduces every
    array bit for bit.
    """
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "hyperparams": hp.to_dict(),
        "state": state.to_dict(),
    }
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc, indent=1, allow_nan=False) + "\n")


def load_checkpoint(path):
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a checkpoint file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    return ModelState.from_dict(doc["state"]), Hyperparams.from_dict(doc["hyperparams"])
