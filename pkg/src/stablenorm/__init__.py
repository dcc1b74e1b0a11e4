"""Numerical lab for the homogenized surface tension (stable norm) of
periodic anisotropic perimeter functionals, with duality-certified
solves, facet detection, Wulff shapes, plane-like minimizers, and
isoperimetric experiments."""

__version__ = "0.1.0"

from .metric import MediumSpec, PeriodicMetric, make_metric  # noqa: F401
from .grid import TorusGrid, BoxGrid, ScalarField, VectorField, BitMask  # noqa: F401
from .cellproblem import SolverParams, CellSolution, solve_cell  # noqa: F401
from .iso import (  # noqa: F401
    IsoParams, IsoResult, ShapeMetrics, set_energy, solve_iso,
    solve_penalized, brute_force_iso, diameter_report, rescale_experiment,
)
