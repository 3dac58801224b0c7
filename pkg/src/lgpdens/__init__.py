"""Logistic Gaussian process density estimation and density regression on grids."""

from .datasets import simulate_dataset
from .evaluation import bayesian_bootstrap, kl_divergence, loo_cv_mlpd, mlpd
from .grid import Grid, GridError, bin_data, build_grid, default_bounds
from .hyper import ccd_design, ccd_integrate, map_optimize
from .kernel import BasisPrior, Hyperparameters, HyperPrior
from .model import DensityModel, LaplaceFit
from .pipeline import EstimateOptions, estimate_density, fit_density
from .sampling import DensityPosterior, density_summary, importance_correction, sample_posterior

__all__ = [
    "BasisPrior", "DensityModel", "DensityPosterior", "EstimateOptions", "Grid", "GridError",
    "HyperPrior", "Hyperparameters", "LaplaceFit", "bayesian_bootstrap", "bin_data",
    "build_grid", "ccd_design", "ccd_integrate", "default_bounds", "density_summary",
    "estimate_density", "fit_density", "importance_correction", "kl_divergence",
    "loo_cv_mlpd", "map_optimize", "mlpd", "sample_posterior", "simulate_dataset",
]
