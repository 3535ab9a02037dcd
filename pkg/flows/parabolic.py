"""
Linear parabolic stepper for d(eta)/dt = tr_w hat-nabla^2 eta + F.

The principal part is treated implicitly with a theta scheme; everything
else enters through the source F. Each implicit solve is a BiCGSTAB
iteration preconditioned by an incomplete LU factorization.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numpy.typing import NDArray

from geometry.grid import Grid
from geometry.tensorfield import MetricField, TensorField, frobenius, partial_derivatives, second_partials
from models.data_models import ParabolicityCertificate, TimeMesh
from utils.decorators import log_execution_time
from utils.exceptions import PositivityError, StiffnessError, UnsupportedModeError
from utils.logger import get_logger

SOLVER_RTOL = 1e-11
SOLVER_MAXITER = 10_000

MetricPath = Union[MetricField, Sequence[MetricField]]
SourcePath = Union[None, NDArray, Sequence[Optional[NDArray]]]


def certify_parabolicity(w_path: MetricPath) -> ParabolicityCertificate:
    """
    Uniform parabolicity constant of a coefficient metric path.

    lambda is the largest of eig_max and 1/eig_min of w^-1 relative to the
    inverse background metric, over all regular nodes and steps.
    """
    path = [w_path] if isinstance(w_path, MetricField) else list(w_path)
    worst, where, when = 1.0, None, None
    for step, w in enumerate(path):
        try:
            w.cholesky()
        except PositivityError as e:
            raise PositivityError(f"{e} (coefficient step {step})", node=e.node, time=w.time,
                                  min_eigenvalue=e.min_eigenvalue)
        background = w.background.metric.copy()
        poles = w.grid.pole_mask()
        background[poles] = np.eye(w.n)
        inverse = w.inverse().copy()
        inverse[poles] = np.eye(w.n)
        root = np.linalg.cholesky(background)
        relative = np.einsum("...ki,...kl,...lj->...ij", root, inverse, root)
        eigenvalues = np.linalg.eigvalsh(relative)
        lam = np.maximum(eigenvalues[..., -1], 1.0 / eigenvalues[..., 0])
        lam = np.where(poles, 1.0, lam)
        node = np.unravel_index(int(np.argmax(lam)), lam.shape)
        if lam[node] > worst:
            worst, where, when = float(lam[node]), tuple(int(i) for i in node), step
    return ParabolicityCertificate(lam=worst, node=where, step=when)


def _parity_classes(parity: NDArray) -> dict:
    """Group flattened component indices by their reflection sign."""
    signs = np.ravel(np.broadcast_to(parity, np.shape(parity)))
    classes: dict = {}
    for index, sign in enumerate(signs if signs.size else [1.0]):
        classes.setdefault(float(sign), []).append(index)
    return classes


def elliptic_operator(grid: Grid, w_inverse: NDArray, parity: float) -> sp.csr_matrix:
    """Sparse tr_w d^2 for scalar fields of the given parity (w_inverse per node)."""
    n = grid.dim
    operator = sp.csr_matrix((grid.spec.size, grid.spec.size))
    for k in range(n):
        for l in range(k, n):
            coefficient = w_inverse[..., k, l].ravel()
            if not np.any(coefficient):
                continue
            scale = 1.0 if k == l else 2.0
            operator = operator + sp.diags(scale * coefficient) @ grid.derivative_matrix(k, l, parity)
    return sp.csr_matrix(operator)


def _solve(matrix: sp.csr_matrix, rhs: NDArray, guess: NDArray, lam: Optional[float]) -> NDArray:
    preconditioner = spla.spilu(matrix.tocsc(), drop_tol=1e-12, fill_factor=20)
    M = spla.LinearOperator(matrix.shape, preconditioner.solve)
    solution, info = spla.bicgstab(matrix, rhs, x0=guess, rtol=SOLVER_RTOL, atol=0.0,
                                   maxiter=SOLVER_MAXITER, M=M)
    if info != 0:
        raise StiffnessError(
            f"implicit solve did not converge (info={info}, lambda={lam})",
            lam=lam, iterations=info if info > 0 else None,
        )
    return solution


def step_linear(eta: TensorField, w: MetricField, F: Optional[NDArray], dt: float,
                theta: float = 1.0, symmetric: Optional[bool] = None) -> TensorField:
    """
    One theta-scheme step of d(eta)/dt = tr_w d^2 eta + F in flat mode.

    Solves (I - theta dt L) x = eta + (1 - theta) dt L eta + dt F per
    component, with L = w^kl d_k d_l assembled once per parity class.
    Symmetric rank-2 fields are solved on the upper triangle and mirrored.
    """
    if not w.background.is_flat:
        raise UnsupportedModeError("the linear stepper only supports the flat background")
    if dt <= 0:
        raise ValueError("dt must be positive")
    grid = eta.grid
    data = eta.data
    components = data.shape[grid.dim:]
    if symmetric is None:
        symmetric = isinstance(eta, MetricField)
    flat = data.reshape(grid.spec.size, -1)
    source = np.zeros_like(flat) if F is None else np.broadcast_to(
        np.asarray(F, dtype=float), data.shape).reshape(grid.spec.size, -1)
    parity = np.broadcast_to(eta.parity, components) if components else eta.parity
    w_inverse = w.inverse()
    identity = sp.identity(grid.spec.size, format="csr")

    solve_for = range(flat.shape[1])
    if symmetric and eta.rank == 2:
        n = grid.dim
        solve_for = [i * n + j for i in range(n) for j in range(i, n)]
    wanted = set(solve_for)
    result = flat.copy()
    lam = None
    for sign, indices in _parity_classes(parity).items():
        indices = [c for c in indices if c in wanted]
        if not indices:
            continue
        L = elliptic_operator(grid, w_inverse, sign)
        system = sp.csr_matrix(identity - theta * dt * L)
        for c in indices:
            rhs = flat[:, c] + dt * source[:, c]
            if theta < 1.0:
                rhs = rhs + (1.0 - theta) * dt * (L @ flat[:, c])
            try:
                result[:, c] = _solve(system, rhs, flat[:, c], lam)
            except StiffnessError:
                lam = certify_parabolicity(w).lam
                raise StiffnessError(f"implicit solve did not converge (lambda={lam:.3g})", lam=lam)
    if symmetric and eta.rank == 2:
        n = grid.dim
        for i in range(n):
            for j in range(i + 1, n):
                result[:, j * n + i] = result[:, i * n + j]
    new_data = result.reshape(data.shape)
    if isinstance(eta, MetricField):
        return eta.with_data(new_data)
    return TensorField(grid, new_data, eta.rank, eta.parity, eta.time)


@dataclass
class ParabolicTrajectory:
    """Solution of a linear parabolic problem on a time mesh."""
    times: NDArray
    fields: List[TensorField]
    max_gradient: NDArray
    max_hessian: NDArray
    certificate: Optional[ParabolicityCertificate] = None
    extra: dict = field(default_factory=dict)

    def values(self) -> NDArray:
        return np.stack([f.data for f in self.fields])


def derivative_maxima(eta: TensorField) -> tuple:
    """max |d eta| and max |d^2 eta| over the grid."""
    grid = eta.grid
    gradient = partial_derivatives(grid, eta.data, eta.parity)
    hessian = second_partials(grid, eta.data, eta.parity)
    return (float(np.nanmax(frobenius(gradient, grid.dim))),
            float(np.nanmax(frobenius(hessian, grid.dim))))


def _at_step(path, k: int):
    if path is None or isinstance(path, (MetricField, np.ndarray)):
        return path
    return path[k]


@log_execution_time
def solve_path(eta0: TensorField, w_path: MetricPath, F_path: SourcePath, mesh: TimeMesh,
               theta: float = 1.0, certify: bool = True) -> ParabolicTrajectory:
    """
    Advance ``eta0`` over ``mesh``.

    ``w_path`` and ``F_path`` are either constant or indexed per step; step
    k (from t_k to t_k+1) uses entry k.
    """
    logger = get_logger()
    certificate = certify_parabolicity(w_path) if certify else None
    fields = [eta0]
    gradient, hessian = derivative_maxima(eta0)
    max_gradient, max_hessian = [gradient], [hessian]
    current = eta0
    for k, dt in enumerate(mesh.dt):
        current = step_linear(current, _at_step(w_path, k), _at_step(F_path, k), float(dt), theta)
        current.time = float(mesh.times[k + 1])
        fields.append(current)
        gradient, hessian = derivative_maxima(current)
        max_gradient.append(gradient)
        max_hessian.append(hessian)
        logger.debug(f"linear step {k + 1}/{mesh.steps}: t={current.time:.6g} "
                     f"max|grad|={gradient:.4g} max|hess|={hessian:.4g}")
    return ParabolicTrajectory(times=mesh.times.copy(), fields=fields,
                               max_gradient=np.array(max_gradient), max_hessian=np.array(max_hessian),
                               certificate=certificate)


def fit_loglog_slope(times: NDArray, values: NDArray, t_min: float, t_max: float) -> float:
    """Least-squares slope of log(values) against log(times) on [t_min, t_max]."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    inside = (times >= t_min) & (times <= t_max) & (values > 0)
    if inside.sum() < 2:
        raise ValueError("fewer than two samples inside the fitting range")
    slope, _ = np.polyfit(np.log(times[inside]), np.log(values[inside]), 1)
    return float(slope)
