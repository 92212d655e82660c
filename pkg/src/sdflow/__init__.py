"""Area-conserving, perimeter-decreasing parametric FEM for surface diffusion of closed curves."""

__version__ = "0.1.0"

from ._backend import BACKEND
from .assembly import StepUnknowns, assemble_jacobian, assemble_residual
from .baseline import BaselineConfig, baseline_step, run_baseline
from .evolve import RunAborted, RunConfig, check_invariants, evolve, redistribute_arclength
from .geometry import (Curve, DegenerateEdgeError, InvalidCurveError, InvalidParameterError,
                       edge_frames, isoperimetric_ratio, make_ellipse, make_flower, mesh_ratio,
                       perimeter, polygon_area, read_curve_csv, write_curve_csv)
from .newton import NewtonConfig, bootstrap_curvature, solve_time_step
from .timequad import EdgeCollapseError
