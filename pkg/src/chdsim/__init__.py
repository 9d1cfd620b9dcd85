"""Finite-element simulator for damage-coupled phase separation.

A quasi-static elastic solid on a rectangular grid carries a conserved
concentration field (fourth-order, degenerate mobility) and a unidirectional
damage field (p-Laplacian regularized, obstacle-constrained).  Fully damaged
material that loses its connection to the Dirichlet boundary is excluded
from the computational region, and every run writes a step ledger whose
discrete energy inequality is verified after the fact.
"""

from .errors import ConfigError, SolverError, VerificationError
from .grid import GridSpec, ScalarField, SymTensorField, VectorField, build_grid
from .material import MaterialModel, RegularizationParams, default_model
from .admissible import ExclusionEvent, RegionMask
from .stepper import ScenarioConfig, SimState, init_state, run, step, sweep_epsilon

__all__ = [
    "ConfigError",
    "SolverError",
    "VerificationError",
    "GridSpec",
    "ScalarField",
    "VectorField",
    "SymTensorField",
    "build_grid",
    "MaterialModel",
    "RegularizationParams",
    "default_model",
    "ExclusionEvent",
    "RegionMask",
    "ScenarioConfig",
    "SimState",
    "init_state",
    "run",
    "step",
    "sweep_epsilon",
]

__version__ = "1.0.0"
