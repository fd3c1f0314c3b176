"""Public package surface for pyslide."""

from .field import Grid, ScalarField, VectorField, from_function, gradient, load_field, save_field
from .integrand import DoubleWell, Integrand, catalog, check_H2
from .deformation import CutoffProfile, Deformation, PiecewiseDeformation, apply, apply_piecewise, slide_field
from .energy import (
    EnergyReport,
    energy,
    growth_profile,
    second_difference,
    second_variation_Q,
)
from .experiments import ExperimentReport, StabilityProbeConfig, build_comparison, stability_probe
from .solver import FlowConfig, gradient_flow, heteroclinic_1d
from .api import ExperimentConfig, describe, run_experiment
from .errors import PySlideError
from .log import set_verbose
from .parallel import set_workers, worker_scope

__all__ = [
    "CutoffProfile",
    "Deformation",
    "DoubleWell",
    "EnergyReport",
    "ExperimentConfig",
    "ExperimentReport",
    "FlowConfig",
    "Grid",
    "Integrand",
    "PiecewiseDeformation",
    "PySlideError",
    "ScalarField",
    "StabilityProbeConfig",
    "VectorField",
    "apply",
    "apply_piecewise",
    "build_comparison",
    "catalog",
    "check_H2",
    "describe",
    "energy",
    "from_function",
    "gradient",
    "gradient_flow",
    "growth_profile",
    "heteroclinic_1d",
    "load_field",
    "run_experiment",
    "save_field",
    "second_difference",
    "second_variation_Q",
    "set_verbose",
    "set_workers",
    "slide_field",
    "stability_probe",
    "worker_scope",
]
