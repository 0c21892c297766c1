"""Synthetic benchmark: sigmoid time courses mixed with Gaussian blob maps.

Images are generated as ``Y = S(t)^T A + noise`` where each source is a
logistic curve in time and each map a Gaussian blob on a lattice. A fixed
set of time points is drawn uniformly on [0, 1] and the images are sampled
from those points with replacement, so several images can share a time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import DataMatrix, DimensionError, GridGeometry

__all__ = [
    "SynthConfig",
    "GroundTruth",
    "sigmoid_sources",
    "gaussian_maps",
    "generate",
    "save_truth",
    "load_truth",
]

TRUTH_FORMAT = "gpsep-truth"
TRUTH_VERSION = 1

DEFAULT_TIME_SCALE = 12.0


def _default_alphas():
    return (DEFAULT_TIME_SCALE * np.array([0.25, 0.5, 0.75])).tolist()


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the synthetic benchmark.

    Parameters
    ----------
    n_sources : int
    alphas : sequence of float
        Sigmoid offsets; source ``i`` is ``1 / (1 + exp(-time_scale * t + alphas[i]))``
        and so crosses 1/2 at ``t = alphas[i] / time_scale``.
    time_scale : float
        Steepness of every sigmoid. With ``time_scale=1`` the curves are
        almost linear on [0, 1] and nearly collinear, which makes the
        factorization unidentifiable; the default 12 keeps them distinct.
    centers : sequence of (row, col) or None
        Blob centers in lattice coordinates. None places them at lattice
        thirds: (H/3, W/3), (H/3, 2W/3), (2H/3, W/2), with any further
        sources on a ring around the grid center. Stored resolved.
    widths : float or sequence of float
        Blob standard deviations in cells. Stored as one value per source.
    height, width : int
        Lattice shape.
    n_timepoints : int
        Number of distinct acquisition times.
    n_images : int
        Number of images, sampled from the time points with replacement.
    noise_std : float
        Standard deviation of the additive Gaussian noise (maps peak at 1).
    hide_times : bool
        Drop the true times from the returned data.
    seed : int
    """

    n_sources: int = 3
    alphas: tuple = field(default_factory=_default_alphas)
    time_scale: float = DEFAULT_TIME_SCALE
    centers: tuple | None = None
    widths: object = 4.0
    height: int = 30
    width: int = 30
    n_timepoints: int = 40
    n_images: int = 50
    noise_std: float = 0.05
    hide_times: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        if self.n_sources < 1:
            raise ValueError("n_sources must be at least 1")
        if len(self.alphas) != self.n_sources:
            raise DimensionError(f"{len(self.alphas)} alphas for {self.n_sources} sources")
        if self.height < 1 or self.width < 1:
            raise ValueError("grid dimensions must be positive")
        if self.n_timepoints < 1 or self.n_images < 1:
            raise ValueError("n_timepoints and n_images must be positive")
        if not self.time_scale > 0:
            raise ValueError("time_scale must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        centers = self.resolved_centers()
        object.__setattr__(self, "centers", tuple(centers))
        object.__setattr__(self, "widths", tuple(self.resolved_widths().tolist()))
        for r, c in centers:
            if not (0 <= r <= self.height - 1 and 0 <= c <= self.width - 1):
                raise ValueError(f"blob center ({r}, {c}) lies outside the {self.height}x{self.width} lattice")
        if np.any(self.resolved_widths() <= 0):
            raise ValueError("blob widths must be positive")

    @property
    def grid(self):
        return GridGeometry(self.height, self.width)

    def resolved_centers(self):
        if self.centers is not None:
            centers = [tuple(float(v) for v in c) for c in self.centers]
            if len(centers) != self.n_sources:
                raise DimensionError(f"{len(centers)} centers for {self.n_sources} sources")
            return centers
        H, W = self.height, self.width
        base = [(H / 3, W / 3), (H / 3, 2 * W / 3), (2 * H / 3, W / 2)]
        out = base[: self.n_sources]
        # beyond three, place further blobs on a ring around the grid center
        extra = self.n_sources - len(out)
        for k in range(extra):
            ang = 2 * np.pi * (k + 0.5) / extra
            out.append(((H - 1) / 2 + 0.35 * (H - 1) * np.sin(ang), (W - 1) / 2 + 0.35 * (W - 1) * np.cos(ang)))
        return [(float(r), float(c)) for r, c in out]

    def resolved_widths(self):
        w = np.broadcast_to(np.asarray(self.widths, dtype=float), (self.n_sources,))
        return w.copy()

    def to_dict(self):
        return {
            "n_sources": self.n_sources,
            "alphas": list(self.alphas),
            "time_scale": self.time_scale,
            "centers": [list(c) for c in self.resolved_centers()],
            "widths": self.resolved_widths().tolist(),
            "height": self.height,
            "width": self.width,
            "n_timepoints": self.n_timepoints,
            "n_images": self.n_images,
            "noise_std": self.noise_std,
            "hide_times": self.hide_times,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        return cls(**d)


@dataclass(frozen=True)
class GroundTruth:
    """Everything needed to score a fit against the generating process.

    Attributes
    ----------
    alphas : ndarray (n_sources,)
    time_scale : float
    maps : ndarray (n_sources, F)
    times : ndarray (n_images,)
        True acquisition time of every image.
    seed : int
        Seed of the stream that drew the times and the noise.
    """

    alphas: np.ndarray
    time_scale: float
    maps: np.ndarray
    times: np.ndarray
    seed: int

    def sources(self, times=None):
        """True source values at ``times`` (default: the images' own times)."""
        return sigmoid_sources(self.alphas, self.times if times is None else times, self.time_scale)

    def to_dict(self):
        return {
            "format": TRUTH_FORMAT,
            "version": TRUTH_VERSION,
            "alphas": np.asarray(self.alphas).tolist(),
            "time_scale": float(self.time_scale),
            "maps": np.asarray(self.maps).tolist(),
            "times": np.asarray(self.times).tolist(),
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != TRUTH_FORMAT:
            raise ValueError("not a ground-truth document")
        if d.get("version") != TRUTH_VERSION:
            raise ValueError(f"unsupported ground-truth version {d.get('version')}")
        return cls(
            alphas=np.asarray(d["alphas"], dtype=float),
            time_scale=float(d["time_scale"]),
            maps=np.asarray(d["maps"], dtype=float),
            times=np.asarray(d["times"], dtype=float),
            seed=int(d["seed"]),
        )


def sigmoid_sources(alphas, times, time_scale=1.0):
    """Logistic time courses ``1 / (1 + exp(-time_scale * t + alpha_i))``.

    Parameters
    ----------
    alphas : array_like (n_sources,)
    times : array_like (T,)
    time_scale : float

    Returns
    -------
    ndarray (n_sources, T)
    """
    alphas = np.atleast_1d(np.asarray(alphas, dtype=float))
    times = np.atleast_1d(np.asarray(times, dtype=float))
    z = time_scale * times[None, :] - alphas[:, None]
    # 1 / (1 + exp(-z)) without overflow
    return np.exp(-np.logaddexp(0.0, -z))


def gaussian_maps(cfg):
    """Gaussian blobs with unit peak, one per source, flattened row-major."""
    ii, jj = np.meshgrid(np.arange(cfg.height, dtype=float), np.arange(cfg.width, dtype=float), indexing="ij")
    maps = []
    for (ci, cj), w in zip(cfg.resolved_centers(), cfg.resolved_widths()):
        maps.append(np.exp(-((ii - ci) ** 2 + (jj - cj) ** 2) / (2.0 * w**2)).ravel())
    return np.stack(maps)


def generate(cfg):
    """Draw a synthetic dataset.

    The stream ``default_rng(cfg.seed)`` draws, in order, the distinct time
    points, the image-to-time assignment and the noise.

    Returns
    -------
    data : DataMatrix
    truth : GroundTruth
    """
    rng = np.random.default_rng(cfg.seed)
    time_points = rng.uniform(0.0, 1.0, cfg.n_timepoints)
    times = time_points[rng.integers(0, cfg.n_timepoints, cfg.n_images)]
    maps = gaussian_maps(cfg)
    sources = sigmoid_sources(cfg.alphas, times, cfg.time_scale)
    noise = rng.standard_normal((cfg.n_images, cfg.height * cfg.width))
    y = sources.T @ maps + cfg.noise_std * noise
    data = DataMatrix(y, observed_times=None if cfg.hide_times else times, grid=cfg.grid)
    truth = GroundTruth(
        alphas=np.asarray(cfg.alphas, dtype=float),
        time_scale=float(cfg.time_scale),
        maps=maps,
        times=times,
        seed=int(cfg.seed),
    )
    return data, truth


def save_truth(path, truth):
    Path(path).write_text(json.dumps(truth.to_dict(), allow_nan=False) + "\n")


def load_truth(path):
    return GroundTruth.from_dict(json.loads(Path(path).read_text()))
