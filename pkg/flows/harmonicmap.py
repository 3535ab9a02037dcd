"""
Harmonic map heat flow with respect to (g(t), flat background) and the
uniqueness cross-check built on it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd
from numpy.typing import NDArray

from flows.deturck import DiagnosticsOptions, deturck_rhs, deturck_vectorfield, flow
from flows.gauge import (
    DiffeoField,
    integrate_deturck_ode,
    invert_map,
    pullback_metric,
    ricci_flow_from,
    time_derivative,
)
from flows.parabolic import step_linear
from geometry.tensorfield import MetricField, TensorField, partial_derivatives, second_partials
from models.data_models import TimeMesh
from utils.decorators import log_execution_time
from utils.exceptions import UnsupportedModeError
from utils.logger import get_logger

MapField = DiffeoField


def _require_flat(g: MetricField) -> None:
    if not g.background.is_flat:
        raise UnsupportedModeError("the harmonic map heat flow is only implemented for the flat background")


def transport_term(phi: MapField, g: MetricField) -> NDArray:
    """-W^a - W^k d_k u^a: the Christoffel part of the map Laplacian."""
    W = deturck_vectorfield(g).data
    du = partial_derivatives(phi.grid, phi.u, phi.parity)
    return -W - np.einsum("...k,...ka->...a", W, du)


def hmhf_rhs(phi: MapField, g: MetricField) -> NDArray:
    """(Delta_{g, flat} phi)^a = g^ij (d_i d_j phi^a - Gamma(g)^k_ij d_k phi^a)."""
    _require_flat(g)
    d2u = second_partials(phi.grid, phi.u, phi.parity)
    return np.einsum("...ij,...ija->...a", g.inverse(), d2u) + transport_term(phi, g)


@log_execution_time
def hmhf_flow(phi_init: MapField, g_path: Sequence[MetricField], mesh: TimeMesh,
              theta: float = 1.0) -> List[MapField]:
    """
    Advance d(phi)/dt = Delta_{g(t), flat} phi over ``mesh``.

    Step k uses g at level k: the principal part implicitly, the transport
    term explicitly. det D phi is checked at every level.
    """
    if len(g_path) != mesh.steps + 1:
        raise ValueError(f"metric path has {len(g_path)} levels, mesh needs {mesh.steps + 1}")
    logger = get_logger()
    phi = MapField(phi_init.grid, phi_init.u, time=float(mesh.times[0]))
    phi.check()
    maps = [phi]
    for k, dt in enumerate(mesh.dt):
        g = g_path[k]
        _require_flat(g)
        u = TensorField(phi.grid, phi.u, rank=1)
        advanced = step_linear(u, g, transport_term(phi, g), float(dt), theta)
        phi = MapField(phi.grid, advanced.data, time=float(mesh.times[k + 1]))
        phi.check()
        maps.append(phi)
        logger.debug(f"hmhf step {k + 1}/{mesh.steps}: min det {np.min(phi.det()):.4f}")
    return maps


def displacement_variance(phi: MapField) -> float:
    """Largest spatial variance over the displacement components."""
    return float(np.max(np.var(phi.u.reshape(-1, phi.grid.dim), axis=0)))


@dataclass
class DeturckPullback:
    """Metrics (phi_t^-1)* g(t) and their Ricci-DeTurck defect per level (NaN at the ends)."""
    metrics: List[MetricField]
    defects: NDArray


def deturck_defect(metrics: Sequence[MetricField], times: NDArray) -> NDArray:
    defects = np.full(len(metrics), np.nan)
    for k in range(1, len(metrics) - 1):
        residual = time_derivative(metrics, times, k) - deturck_rhs(metrics[k])
        defects[k] = float(np.nanmax(np.abs(residual)))
    return defects


def pullback_to_deturck(phi_path: Sequence[MapField], g_path: Sequence[MetricField]) -> DeturckPullback:
    """Pull a Ricci flow back by the inverse harmonic-map-flow maps."""
    if len(phi_path) != len(g_path):
        raise ValueError("one map per metric level is required")
    metrics = []
    for phi, g in zip(phi_path, g_path):
        inverse = invert_map(phi)
        pulled = pullback_metric(inverse, g)
        pulled.time = g.time
        metrics.append(pulled)
    times = np.array([g.time for g in metrics], dtype=float)
    defects = deturck_defect(metrics, times) if len(metrics) >= 3 else np.full(len(metrics), np.nan)
    return DeturckPullback(metrics=metrics, defects=defects)


@dataclass
class UniquenessReport:
    """Direct DeTurck flow against the Ricci flow -> harmonic map flow -> pullback route."""
    times: NDArray
    gaps: NDArray
    route_a: List[MetricField] = field(repr=False)
    route_b: List[MetricField] = field(repr=False)
    defects: Optional[NDArray] = None

    @property
    def gap(self) -> float:
        return float(np.nanmax(self.gaps))

    def frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"t": self.times, "gap": self.gaps})
        if self.defects is not None:
            frame["defect"] = self.defects
        return frame


@log_execution_time
def uniqueness_gap(g0: MetricField, mesh: TimeMesh, start_index: int = 1,
                   options: Optional[DiagnosticsOptions] = None) -> UniquenessReport:
    """
    Sup gap between the two routes to the Ricci-DeTurck solution.

    Route A is the DeTurck flow itself. Route B pulls it back to a Ricci
    flow with the DeTurck gauge, runs the harmonic map flow from the gauge
    map at the first kept level and pulls the Ricci flow back by its
    inverse.
    """
    options = options or DiagnosticsOptions(curvature=False, boundary=False, symmetry=False)
    trajectory = flow(g0, mesh, options=options)
    if trajectory.halted:
        raise trajectory.error
    route_a = trajectory.metrics
    W_path = [deturck_vectorfield(g) for g in route_a]
    maps = integrate_deturck_ode(W_path, mesh, stop_index=start_index)
    ricci_path = ricci_flow_from(route_a, maps)

    times = mesh.times[start_index:]
    sub_mesh = TimeMesh.from_times(times)
    phi_path = hmhf_flow(maps[0], ricci_path, sub_mesh)
    pulled = pullback_to_deturck(phi_path, ricci_path)
    route_b = pulled.metrics
    gaps = np.array([float(np.max(np.abs(b.data - a.data)))
                     for a, b in zip(route_a[start_index:], route_b)])
    get_logger().info(f"uniqueness gap {np.max(gaps):.3e} on grid {g0.grid.shape}")
    return UniquenessReport(times=times, gaps=gaps, route_a=route_a[start_index:],
                            route_b=route_b, defects=pulled.defects)

