"""
Gauge recovery: from a Ricci-DeTurck trajectory to a Ricci flow.

The DeTurck ODE d(psi)/dt = -W(psi, t) is integrated backward from
psi_T = id. Maps are stored as displacements u with psi(x) = x + u(x),
wrapped by the grid's periodic axes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from numpy.typing import NDArray

from geometry.curvature import riemann
from geometry.grid import Grid
from geometry.tensorfield import MetricField, TensorField, component_parity, partial_derivatives
from models.data_models import TimeMesh
from utils.decorators import log_execution_time
from utils.exceptions import GaugeDegenerationError, InversionError
from utils.logger import get_logger

INVERSION_TOLERANCE = 1e-10
INVERSION_DAMPING = 0.8
INVERSION_MAX_ITERATIONS = 500


class DiffeoField:
    """
    A grid-representable map psi(x) = x + u(x).

    ``jacobian[..., k, i]`` holds d(psi^k)/dx^i; when it is not transported
    alongside the map it is taken from finite differences of u.
    """

    def __init__(self, grid: Grid, u: NDArray, jacobian: Optional[NDArray] = None,
                 time: Optional[float] = None):
        u = np.asarray(u, dtype=float)
        if u.shape != grid.shape + (grid.dim,):
            raise ValueError(f"displacement has shape {u.shape}, expected {grid.shape + (grid.dim,)}")
        self.grid = grid
        self.u = u
        self.time = time
        self._jacobian = None if jacobian is None else np.asarray(jacobian, dtype=float)

    @classmethod
    def identity(cls, grid: Grid, time: Optional[float] = None) -> "DiffeoField":
        n = grid.dim
        return cls(grid, np.zeros(grid.shape + (n,)),
                   np.broadcast_to(np.eye(n), grid.shape + (n, n)).copy(), time)

    @property
    def parity(self) -> NDArray:
        return component_parity(1, self.grid.dim)

    def points(self) -> NDArray:
        return self.grid.points() + self.u

    @property
    def jacobian(self) -> NDArray:
        if self._jacobian is None:
            du = partial_derivatives(self.grid, self.u, self.parity)
            self._jacobian = np.eye(self.grid.dim) + np.swapaxes(du, -1, -2)
        return self._jacobian

    def det(self) -> NDArray:
        return np.linalg.det(self.jacobian)

    def bilipschitz(self) -> float:
        """K with K^-1 |v| <= |D psi v| <= K |v| at every node."""
        singular = np.linalg.svd(self.jacobian, compute_uv=False)
        return float(max(np.max(singular[..., 0]), 1.0 / np.min(singular[..., -1])))

    def as_tensor(self) -> TensorField:
        return TensorField(self.grid, self.u, rank=1, time=self.time)

    def check(self) -> None:
        """Raise GaugeDegenerationError if det D psi <= 0 somewhere."""
        det = self.det()
        if np.any(det <= 0) or not np.all(np.isfinite(det)):
            node = tuple(int(i) for i in np.unravel_index(np.nanargmin(det), det.shape))
            raise GaugeDegenerationError(
                f"det D psi = {det[node]:.3e} at node {node}, t = {self.time}", time=self.time, node=node,
            )


def _velocity(W: TensorField, points: NDArray) -> NDArray:
    return W.grid.interpolate(W.data, points, W.parity)


def _velocity_gradient(W: TensorField, points: NDArray) -> NDArray:
    """d_i W^k at ``points``, stored [..., k, i]."""
    dW = np.swapaxes(partial_derivatives(W.grid, W.data, W.parity), -1, -2)
    return W.grid.interpolate(dW, points, component_parity(2, W.grid.dim))


@log_execution_time
def integrate_deturck_ode(W_path: Sequence[TensorField], mesh: TimeMesh, stop_index: int = 1,
                          transport_jacobian: bool = True) -> List[DiffeoField]:
    """
    Integrate d(psi)/dt = -W(psi, t) backward from psi_T = id with Heun's method.

    Returns maps for mesh levels stop_index..N in increasing time order.
    The Jacobian is transported by d(D psi)/dt = -DW(psi) D psi.
    """
    if len(W_path) != mesh.steps + 1:
        raise ValueError(f"W path has {len(W_path)} levels, mesh needs {mesh.steps + 1}")
    if not 0 <= stop_index <= mesh.steps:
        raise ValueError("stop_index must lie in the mesh")
    logger = get_logger()
    grid = W_path[-1].grid
    psi = DiffeoField.identity(grid, float(mesh.times[-1]))
    maps = [psi]
    for k in range(mesh.steps - 1, stop_index - 1, -1):
        dt = float(mesh.times[k + 1] - mesh.times[k])
        here = psi.points()
        v_new = _velocity(W_path[k + 1], here)
        predicted = here + dt * v_new
        v_old = _velocity(W_path[k], predicted)
        u = psi.u + 0.5 * dt * (v_new + v_old)
        jacobian = None
        if transport_jacobian:
            J = psi.jacobian
            A_new = _velocity_gradient(W_path[k + 1], here) @ J
            J_pred = J + dt * A_new
            A_old = _velocity_gradient(W_path[k], predicted) @ J_pred
            jacobian = J + 0.5 * dt * (A_new + A_old)
        psi = DiffeoField(grid, u, jacobian, float(mesh.times[k]))
        psi.check()
        maps.append(psi)
        logger.debug(f"gauge step t={mesh.times[k]:.6g}: max|u|={np.max(np.abs(u)):.3e}")
    maps.reverse()
    return maps


def extrapolate_initial(psi_a: DiffeoField, psi_b: DiffeoField) -> DiffeoField:
    """Linear Richardson extrapolation of two maps at times t_a < t_b to t = 0."""
    if psi_a.time is None or psi_b.time is None or psi_b.time <= psi_a.time:
        raise ValueError("extrapolation needs two maps with increasing time labels")
    factor = psi_a.time / (psi_b.time - psi_a.time)
    u0 = psi_a.u + factor * (psi_a.u - psi_b.u)
    psi0 = DiffeoField(psi_a.grid, u0, time=0.0)
    psi0.check()
    return psi0


def invert_map(psi: DiffeoField, tolerance: float = INVERSION_TOLERANCE,
               damping: float = INVERSION_DAMPING, max_iterations: int = INVERSION_MAX_ITERATIONS) -> DiffeoField:
    """
    Numerical inverse by damped fixed-point iteration.

    The inverse displacement v solves v(y) = -u(y + v(y)).
    """
    grid = psi.grid
    y = grid.points()
    v = -psi.u.copy()
    residual = np.inf
    for iteration in range(max_iterations):
        mismatch = v + grid.interpolate(psi.u, y + v, psi.parity)
        residual = float(np.max(np.abs(mismatch)))
        if residual < tolerance:
            get_logger().debug(f"map inverted in {iteration} iterations (residual {residual:.2e})")
            return DiffeoField(grid, v, time=psi.time)
        v = v - damping * mismatch
    raise InversionError(f"map inversion stalled at residual {residual:.3e}", max_residual=residual)


def pullback_metric(psi: DiffeoField, g: MetricField) -> MetricField:
    """(psi* g)_ij = g_kl(psi(x)) d_i psi^k d_j psi^l."""
    values = g.grid.interpolate(g.data, psi.points(), g.parity)
    J = psi.jacobian
    pulled = np.einsum("...ki,...kl,...lj->...ij", J, values, J)
    result = MetricField(g.grid, pulled, background=g.background,
                         time=g.time if g.time is not None else psi.time)
    result.cholesky()
    return result


@dataclass
class ResidualReport:
    """Per-level max of |d_t g + 2 Ric(g)| with the per-node fields; end levels are NaN."""
    times: NDArray
    values: NDArray
    fields: List[Optional[NDArray]]

    @property
    def max(self) -> float:
        return float(np.nanmax(self.values))


def time_derivative(metrics: Sequence[MetricField], times: NDArray, k: int) -> NDArray:
    """Three-point derivative on a non-uniform mesh at interior level k."""
    dt1 = times[k] - times[k - 1]
    dt2 = times[k + 1] - times[k]
    return (-dt2 / (dt1 * (dt1 + dt2)) * metrics[k - 1].data
            + (dt2 - dt1) / (dt1 * dt2) * metrics[k].data
            + dt1 / (dt2 * (dt1 + dt2)) * metrics[k + 1].data)


def ricci_residual(metrics: Sequence[MetricField], times: Optional[Sequence[float]] = None,
                   mask: Optional[NDArray] = None) -> ResidualReport:
    """
    Residual of the Ricci flow equation along a trajectory.

    ``mask`` selects the grid nodes that enter the maximum.
    """
    if len(metrics) < 3:
        raise ValueError("a residual needs at least three levels")
    times = np.asarray([g.time for g in metrics] if times is None else times, dtype=float)
    values = np.full(len(metrics), np.nan)
    fields: List[Optional[NDArray]] = [None] * len(metrics)
    for k in range(1, len(metrics) - 1):
        residual = time_derivative(metrics, times, k) + 2.0 * riemann(metrics[k]).ricci
        norm = np.sqrt(np.sum(residual * residual, axis=(-2, -1)))
        fields[k] = norm
        values[k] = float(np.nanmax(norm if mask is None else norm[mask]))
    return ResidualReport(times=times, values=values, fields=fields)


def ricci_flow_from(metrics: Sequence[MetricField], maps: Sequence[DiffeoField]) -> List[MetricField]:
    """Pull back each DeTurck level by the gauge map with the same time label."""
    offset = len(metrics) - len(maps)
    return [pullback_metric(psi, metrics[offset + i]) for i, psi in enumerate(maps)]
