"""Guaranteed two-sided bounds on the radius of the solution set of a
reaction-diffusion problem with uncertain coefficients."""
from .fem import FluxField, ScalarField, solve_scenario
from .majorant import minimize_majorant, normalized_radius_upper, radius_upper
from .mesh import Mesh, build_mesh, load_mesh, refine, unit_square_mesh
from .minorant import lambda_bound, maximize_minorant, minorant_radius, normalized_lambda_bound
from .problem import Scenario, c_lower, c_upper, constant_scenario, theta
from .report import compute_bounds, sample_radius, verify_ordering
from .scenario_file import load_scenario

__all__ = [
    "FluxField", "ScalarField", "solve_scenario",
    "minimize_majorant", "normalized_radius_upper", "radius_upper",
    "Mesh", "build_mesh", "load_mesh", "refine", "unit_square_mesh",
    "lambda_bound", "maximize_minorant", "minorant_radius", "normalized_lambda_bound",
    "Scenario", "c_lower", "c_upper", "constant_scenario", "theta",
    "compute_bounds", "sample_radius", "verify_ordering", "load_scenario",
]
__version__ = "0.1.0"
