"""Extremes of the discrete Gaussian free field in d >= 3: sampling, extremal
point patterns and Poisson-approximation checks."""
__version__ = "0.1.0"

from . import kernels
from .lattice import LatticeBox, bulk, linf_ball_offsets
from .green import (GreenTable, QuadSpec, SolverSpec, green_infinite, green_infinite_many,
                    green_finite_column, kappa, bulk_gap, calibrate_cd, default_table)
from .rng import RngSpec
from .sampler import FieldPlan, FieldSample, sample_zero_boundary, sample_infinite_box
from .extremes import (NormalizingConstants, Rectangle, PointPattern, normalizing_constants,
                       extract_points, count)
from .steinchen import (DependencyGraph, SteinChenReport, build_neighborhoods, joint_tail,
                        stein_chen_report, tv_bound)
from .verify import TestReport

__all__ = [
    "kernels", "LatticeBox", "bulk", "linf_ball_offsets", "GreenTable", "QuadSpec",
    "SolverSpec", "green_infinite", "green_infinite_many", "green_finite_column", "kappa",
    "bulk_gap", "calibrate_cd", "default_table", "RngSpec", "FieldPlan", "FieldSample",
    "sample_zero_boundary", "sample_infinite_box", "NormalizingConstants", "Rectangle",
    "PointPattern", "normalizing_constants", "extract_points", "count", "DependencyGraph",
    "SteinChenReport", "build_neighborhoods", "joint_tail", "stein_chen_report", "tv_bound",
    "TestReport",
]
