"""Quasistatic damage evolution by viscous incremental minimization.

Modules: :mod:`grid` (P1 meshes and operators), :mod:`material` (constitutive
data and dissipation), :mod:`loads`, :mod:`energy` (reduced energy),
:mod:`stepper` (time stepping), :mod:`diagnostics` (energy inequalities),
:mod:`vanishing` (arclength reparameterization and eps sweeps),
:mod:`refinement` (tau studies) and :mod:`cli`.
"""

from .energy import ReducedEnergy, SolverFailure
from .grid import Grid, interval, rectangle
from .loads import LoadProgram, TimeProfile
from .material import MaterialModel
from .stepper import RunFailure, SolverConfig, Trajectory, incremental_step, run

__all__ = [
    "Grid", "interval", "rectangle", "MaterialModel", "LoadProgram", "TimeProfile", "ReducedEnergy",
    "SolverFailure", "SolverConfig", "Trajectory", "RunFailure", "incremental_step", "run",
]

__version__ = "0.1.0"
