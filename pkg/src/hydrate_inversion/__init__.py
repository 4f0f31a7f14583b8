"""Bayesian calibration of an elasto-plastic hydrate-bearing sand model with active subspaces."""
from .constitutive import ElasticParams, MaterialState, PlasticParams, integrate_step
from .triax import LoadingSchedule, qoi_map, simulate
from .prior import PriorBox, kde_fit, sample_prior
from .inverse import Dataset, NoiseModel, PlantedRidgeForward, TriaxialForward, misfit, misfit_gradient
from .active_subspace import estimate_C, estimate_spectrum, heuristic_sample_count, split
from .surrogate import QuadraticSurface, fit
from .mcmc import ChainConfig, ess, mh_active, mh_inactive, reconstruct, sample_inactive

__version__ = "0.1.0"

__all__ = [
    "ChainConfig", "Dataset", "ElasticParams", "LoadingSchedule", "MaterialState", "NoiseModel",
    "PlantedRidgeForward", "PlasticParams", "PriorBox", "QuadraticSurface", "TriaxialForward",
    "estimate_C", "estimate_spectrum", "ess", "fit", "heuristic_sample_count", "integrate_step",
    "kde_fit", "mh_active", "mh_inactive", "misfit", "misfit_gradient", "qoi_map", "reconstruct",
    "sample_inactive", "sample_prior", "simulate", "split",
]
