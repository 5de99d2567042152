"""Fluid limits of large open Jackson networks with kernel routing."""

from . import fluid, harness, measures, network_sim, operators, skorokhod
from ._validation import ValidationError
from .fields import PathField
from .fluid import FluidSolution, FluidSpec, fluid_limit
from .harness import StudyConfig, fit_rate, run_convergence_study
from .measures import AtomSet, wasserstein1
from .network_sim import NetworkSpec, simulate
from .operators import Kernel, from_matrix, make_kernel
from .skorokhod import reflect, solve_finite, solve_regulator

__version__ = "0.1.0"

__all__ = [
    "AtomSet",
    "FluidSolution",
    "FluidSpec",
    "Kernel",
    "NetworkSpec",
    "PathField",
    "StudyConfig",
    "ValidationError",
    "fit_rate",
    "fluid",
    "fluid_limit",
    "from_matrix",
    "harness",
    "make_kernel",
    "measures",
    "network_sim",
    "operators",
    "reflect",
    "run_convergence_study",
    "simulate",
    "skorokhod",
    "solve_finite",
    "solve_regulator",
    "wasserstein1",
]
