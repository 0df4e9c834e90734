"""Meshfree solver for the linear peridynamic solid model with volume constraints."""

from .boundary import BoundaryPlan
from .geometry import (Domain, PointCloud, RegionTag, build_cartesian_cloud,
                       build_polar_cloud, classify_regions)
from .harness import (BenchmarkCase, ConvergenceReport, case_catalog, fit_rate,
                      get_case, l2_error, run_convergence)
from .kernel import CONSTANT, INVERSE_R, KernelSpec, Material
from .operators import NodalField, apply_lps, assemble, dilatation, g_operator_linf
from .quadrature import QuadratureRule, build_rule, compute_weights, exact_moment
from .solver import (NewmarkState, StaticSolveConfig, newmark_step, run_dynamic,
                     solve_static)

__all__ = [
    "BoundaryPlan", "Domain", "PointCloud", "RegionTag", "build_cartesian_cloud",
    "build_polar_cloud", "classify_regions",
    "BenchmarkCase", "ConvergenceReport", "case_catalog", "fit_rate", "get_case",
    "l2_error", "run_convergence",
    "CONSTANT", "INVERSE_R", "KernelSpec", "Material",
    "NodalField", "apply_lps", "assemble", "dilatation", "g_operator_linf",
    "QuadratureRule", "build_rule", "compute_weights", "exact_moment",
    "NewmarkState", "StaticSolveConfig", "newmark_step", "run_dynamic", "solve_static",
]
