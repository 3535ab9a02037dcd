"""Grids, tensor fields, curvature and the metric file format."""

from .grid import Grid
from .tensorfield import (
    TensorField,
    MetricField,
    BackgroundMetric,
    component_parity,
    christoffel,
    hat_gradient,
    hat_hessian,
    holder_seminorm,
    weighted_norm,
    mollify,
)
from .curvature import (
    CurvatureBundle,
    riemann,
    curvature_operator,
    pic_margin,
    cone_margins,
    complex_sectional_oracle,
    boundary_form,
)
from .metric_io import read_document, write_document, read_metric, write_metric

__all__ = [
    "Grid",
    "TensorField",
    "MetricField",
    "BackgroundMetric",
    "component_parity",
    "christoffel",
    "hat_gradient",
    "hat_hessian",
    "holder_seminorm",
    "weighted_norm",
    "mollify",
    "CurvatureBundle",
    "riemann",
    "curvature_operator",
    "pic_margin",
    "cone_margins",
    "complex_sectional_oracle",
    "boundary_form",
    "read_document",
    "write_document",
    "read_metric",
    "write_metric",
]
