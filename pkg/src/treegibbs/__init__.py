"""Exact inference and Monte Carlo for ferromagnetic spin models on Cayley trees."""
from __future__ import annotations

__version__ = "0.1.0"

from .boundary_law import ChainKernel, HomotopyError, central_kernel, free_law, solve_central
from .model import ModelError, ModelSpec, bounds_report, build_transfer
from .tree import BallGeometry, ConfigWindow, GeometryError, GuardExceeded, branch_plan

__all__ = [
    "BallGeometry", "ChainKernel", "ConfigWindow", "GeometryError", "GuardExceeded", "HomotopyError",
    "ModelError", "ModelSpec", "bounds_report", "branch_plan", "build_transfer", "central_kernel",
    "free_law", "solve_central",
]
