"""Spatio-temporal source separation with monotonic Gaussian-process time courses.

Observations ``Y`` (subjects x features) are factorized as ``S(t)^T A``, where
the temporal sources ``S`` are random-feature Gaussian processes constrained
to be increasing, the spatial maps ``A`` have a Gaussian-random-field
posterior, and every subject has a latent time-shift. The model is fitted by
stochastic gradient ascent on its evidence lower bound.
"""

from ._kernels import available_backends, backend, use_backend
from .elbo import elbo, log_likelihood
from .model import (
    DataMatrix,
    ElboBreakdown,
    GridGeometry,
    Hyperparams,
    ModelState,
    NoiseDraws,
    init_model,
    load_checkpoint,
    save_checkpoint,
)
from .optim import FitConfig, FitTrace, fit, grad_elbo

__version__ = "0.1.0"

__all__ = [
    "DataMatrix",
    "ElboBreakdown",
    "FitConfig",
    "FitTrace",
    "GridGeometry",
    "Hyperparams",
    "ModelState",
    "NoiseDraws",
    "available_backends",
    "backend",
    "elbo",
    "fit",
    "grad_elbo",
    "init_model",
    "load_checkpoint",
    "log_likelihood",
    "save_checkpoint",
    "use_backend",
]
