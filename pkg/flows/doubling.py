"""
Doubling of half-domain metrics across their mirror slices.

A half domain [0, L] x T^(n-1) with N nodes along axis 0 doubles to a
periodic axis of 2(N-1) nodes and extent 2L. Components with an even
number of zero indices extend evenly, the mixed components g_0a oddly.
"""

from __future__ import annotations

from typing import List, Sequence

import numpy as np
import pandas as pd
from numpy.typing import NDArray

from geometry.curvature import boundary_form
from geometry.grid import Grid
from geometry.tensorfield import MetricField, TensorField, component_parity
from models.data_models import AxisSpec, AxisTopology, BoundaryForm, GridSpec
from utils.exceptions import AsymmetryError, ConfigurationError, ReflectionError
from utils.logger import get_logger

MIRROR_TOLERANCE = 1e-10
SYMMETRY_TOLERANCE = 1e-8


def doubled_grid(half: Grid) -> Grid:
    axis0 = half.axis(0)
    if axis0.periodic:
        raise ConfigurationError("only a mirrored axis 0 can be doubled")
    axis = AxisSpec(AxisTopology.PERIODIC, 2.0 * axis0.extent, 2 * (axis0.resolution - 1), axis0.origin)
    return Grid(GridSpec((axis,) + tuple(half.spec.axes[1:]), half.order))


def half_grid(doubled: Grid) -> Grid:
    axis0 = doubled.axis(0)
    if not axis0.periodic or axis0.resolution % 2:
        raise ConfigurationError("restriction needs a periodic axis 0 with an even node count")
    axis = AxisSpec(AxisTopology.REFLECT_ODD_CAPABLE, 0.5 * axis0.extent, axis0.resolution // 2 + 1, axis0.origin)
    return Grid(GridSpec((axis,) + tuple(doubled.spec.axes[1:]), doubled.order))


def max_mixed_on_mirrors(half: MetricField) -> float:
    """Largest |g_0a| (a >= 1) on the two mirror slices."""
    if half.n < 2:
        return 0.0
    mixed = half.data[..., 0, 1:]
    return float(max(np.max(np.abs(mixed[0])), np.max(np.abs(mixed[-1]))))


def double_metric(half: MetricField, tolerance: float = MIRROR_TOLERANCE) -> MetricField:
    """Reflect a half-domain metric about both mirror slices."""
    mixed = max_mixed_on_mirrors(half)
    if mixed > tolerance:
        raise ReflectionError(f"mixed components reach {mixed:.3e} on a mirror slice", max_mixed=mixed)
    grid = doubled_grid(half.grid)
    N = half.grid.shape[0]
    parity = component_parity(2, half.n)
    data = np.empty(grid.shape + (half.n, half.n))
    data[:N] = half.data
    mirrored = half.data[N - 2:0:-1]
    data[N:] = parity * mirrored
    return MetricField(grid, data, time=half.time)


def restrict_metric(g: MetricField) -> MetricField:
    """Nodes 0..N/2 of a doubled metric, as a half-domain metric."""
    grid = half_grid(g.grid)
    return MetricField(grid, g.data[:grid.shape[0]], time=g.time)


def reflect(field: NDArray, parity: NDArray) -> NDArray:
    """x0 -> -x0 on a periodic axis 0, with component signs."""
    field = np.asarray(field, dtype=float)
    N = field.shape[0]
    return parity * field[(-np.arange(N)) % N]


def symmetry_residual(g: TensorField) -> float:
    """max |g - reflect(g)| over nodes and components."""
    return float(np.max(np.abs(g.data - reflect(g.data, g.parity))))


def symmetrize(g: MetricField) -> MetricField:
    """Projection onto reflection-invariant metrics."""
    return g.with_data(0.5 * (g.data + reflect(g.data, g.parity)))


def mirror_boundary_forms(half: MetricField, tolerance: float = -1e-8) -> List[BoundaryForm]:
    """Boundary forms at x0 = 0 (half above) and x0 = L (half below)."""
    last = half.grid.shape[0] - 1
    return [boundary_form(half, 0, 1, tolerance=tolerance),
            boundary_form(half, last, -1, tolerance=tolerance)]


def boundary_forms_of(g: MetricField) -> List[BoundaryForm]:
    """Mirror boundary forms of a doubled metric, taken on its restriction."""
    return mirror_boundary_forms(restrict_metric(g))


def boundary_monitor(metrics: Sequence[MetricField]) -> pd.DataFrame:
    """
    Time series of the mirror boundary forms of a symmetric trajectory.

    Raises AsymmetryError as soon as one level is not reflection invariant,
    since its restriction is then not the flow on the half domain.
    """
    rows = []
    for step, g in enumerate(metrics):
        residual = symmetry_residual(g)
        if residual > SYMMETRY_TOLERANCE:
            raise AsymmetryError(f"level {step} has symmetry residual {residual:.3e}", residual=residual)
        forms = boundary_forms_of(g)
        rows.append({
            "step": step,
            "t": float(g.time) if g.time is not None else float("nan"),
            "boundary_A_norm": max(f.norm for f in forms),
            "H_min": min(float(np.min(f.H)) for f in forms),
            "H_max": max(float(np.max(f.H)) for f in forms),
            "symmetry_residual": residual,
        })
    get_logger().debug(f"boundary monitor over {len(rows)} levels")
    return pd.DataFrame(rows)
