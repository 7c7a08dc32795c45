"""Operator splitting for stochastic degenerate parabolic-hyperbolic equations on the torus."""

__version__ = "0.1.0"

from .det_solver import (DetScheme, DetStepReport, det_solve, det_solve_common, det_step,
                         max_stable_dt)
from .grid import Field, Mollifier, TorusGrid, l1_distance, lp_norm, mollifier_pair
from .model import (ProblemSpec, builtin_problems, get_problem, make_diffusion, make_flux,
                    make_noise, make_problem, validate_hypotheses)
from .sde_solver import RngStream, SdeStepPlan, sample_increments, sde_solve, sde_step
from .splitting import Partition, SplitConfig, SplitTrajectory, run_splitting

__all__ = [
    "DetScheme", "DetStepReport", "det_solve", "det_solve_common", "det_step", "max_stable_dt",
    "Field", "Mollifier", "TorusGrid", "l1_distance", "lp_norm", "mollifier_pair",
    "ProblemSpec", "builtin_problems", "get_problem", "make_diffusion", "make_flux",
    "make_noise", "make_problem", "validate_hypotheses",
    "RngStream", "SdeStepPlan", "sample_increments", "sde_solve", "sde_step",
    "Partition", "SplitConfig", "SplitTrajectory", "run_splitting",
]
