"""Quasi-periodic scattering from layered periodic media with a fast direct solver."""
from __future__ import annotations

from .geometry import (IncidentWave, InterfaceGeometry, LayerStack, UnitCellParams, fourier_interface,
                       load_stack, polyline_interface, random_fourier_interface, sampled_interface,
                       stack_from_dict)
from .hinv import BlockInverse, build_block_inverse
from .lowrank import CompressionParams
from .postproc import (BraggTable, FieldGrid, RayleighBlochCoefficients, bragg_efficiencies,
                       evaluate_field, flux_error)
from .solver import QPSolver, SolveResult, SolverError, SolverParams, group_angles, precompute_I, solve, sweep

__all__ = [
    "IncidentWave", "InterfaceGeometry", "LayerStack", "UnitCellParams", "fourier_interface",
    "load_stack", "polyline_interface", "random_fourier_interface", "sampled_interface",
    "stack_from_dict", "BlockInverse", "build_block_inverse", "CompressionParams", "BraggTable",
    "FieldGrid", "RayleighBlochCoefficients", "bragg_efficiencies", "evaluate_field", "flux_error",
    "QPSolver", "SolveResult", "SolverError", "SolverParams", "group_angles", "precompute_I",
    "solve", "sweep",
]
__version__ = "0.1.0"
