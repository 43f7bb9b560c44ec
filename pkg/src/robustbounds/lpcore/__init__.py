"""Scenario grids, primal/dual LP assembly and the simplex solver."""

from .assemble import assemble_dual, assemble_primal, dual_layout, primal_layout
from .extract import HedgePortfolio, MartingaleMeasure, extract_hedge, extract_measure, verify_superhedge
from .grid import ScenarioGrid, build_grid
from .program import LinearProgram, LpSolution
from .simplex import lp_dual, simplex_solve
