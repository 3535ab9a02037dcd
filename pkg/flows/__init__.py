"""Linear parabolic solver, Ricci-DeTurck flow, gauges, doubling and the rotationally symmetric reduction."""

from .parabolic import certify_parabolicity, step_linear, solve_path
from .doubling import double_metric, restrict_metric, symmetry_residual, boundary_monitor
from .deturck import (
    DiagnosticsOptions,
    FlowTrajectory,
    q_term,
    deturck_vectorfield,
    deturck_rhs,
    flow,
    picard_operator,
    contraction_ratio,
)
from .gauge import DiffeoField, integrate_deturck_ode, pullback_metric, ricci_residual
from .harmonicmap import hmhf_rhs, hmhf_flow, pullback_to_deturck, uniqueness_gap
from .rotsym import (
    WarpedMetric,
    warped_curvature,
    reduced_rhs,
    reduced_flow,
    cone_check_rotsym,
)

__all__ = [
    "certify_parabolicity",
    "step_linear",
    "solve_path",
    "double_metric",
    "restrict_metric",
    "symmetry_residual",
    "boundary_monitor",
    "DiagnosticsOptions",
    "FlowTrajectory",
    "q_term",
    "deturck_vectorfield",
    "deturck_rhs",
    "flow",
    "picard_operator",
    "contraction_ratio",
    "DiffeoField",
    "integrate_deturck_ode",
    "pullback_metric",
    "ricci_residual",
    "hmhf_rhs",
    "hmhf_flow",
    "pullback_to_deturck",
    "uniqueness_gap",
    "WarpedMetric",
    "warped_curvature",
    "reduced_rhs",
    "reduced_flow",
    "cone_check_rotsym",
]
