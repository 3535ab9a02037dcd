"""
Ricci-DeTurck flow.

The right side is assembled in the background-connection form
tr_g hat-nabla^2 g + Q(g, hat-nabla g); the Ricci/Lie-derivative form
-2 Ric(g) + L_W g is kept as an independent oracle only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from numpy.typing import NDArray

from flows.doubling import boundary_forms_of, symmetry_residual
from flows.parabolic import certify_parabolicity, derivative_maxima, fit_loglog_slope, step_linear
from geometry.curvature import curvature_operator, margins_summary, riemann
from geometry.tensorfield import (
    MetricField,
    TensorField,
    christoffel,
    hat_gradient,
    hat_hessian,
    partial_derivatives,
    weighted_norm,
)
from models.data_models import DiagnosticsRecord, TimeMesh, diagnostics_frame
from utils.decorators import log_execution_time
from utils.exceptions import NumericalError
from utils.logger import get_logger


# ---------------------------------------------------------------- right side
def q_term(g: MetricField) -> TensorField:
    """Lower-order part Q(g, hat-nabla g) of the Ricci-DeTurck operator."""
    D = hat_gradient(g).data
    inv = g.inverse()
    Q = 0.5 * (
        np.einsum("...kl,...pq,...ipk,...jql->...ij", inv, inv, D, D)
        + 2.0 * np.einsum("...kl,...pq,...kip,...qjl->...ij", inv, inv, D, D)
        - 2.0 * np.einsum("...kl,...pq,...kip,...ljq->...ij", inv, inv, D, D)
        - 4.0 * np.einsum("...kl,...pq,...ipk,...ljq->...ij", inv, inv, D, D)
    )
    background = g.background
    if not background.is_flat:
        curvature = np.einsum("...kl,...ip,...pq,...jkql->...ij",
                              inv, g.data, background.inverse, background.riemann)
        Q = Q - curvature - np.swapaxes(curvature, -1, -2)
    Q = 0.5 * (Q + np.swapaxes(Q, -1, -2))
    return TensorField(g.grid, Q, rank=2, time=g.time)


def trace_hessian(g: MetricField, eta: Optional[TensorField] = None) -> NDArray:
    """tr_g hat-nabla^2 eta (eta defaults to g itself)."""
    eta = g if eta is None else eta
    hessian = hat_hessian(eta, g.background).data
    slots = "ijkl"[:eta.rank]
    return np.einsum(f"...ab,...ab{slots}->...{slots}", g.inverse(), hessian)


def deturck_rhs(g: MetricField) -> NDArray:
    """tr_g hat-nabla^2 g + Q(g, hat-nabla g)."""
    return trace_hessian(g) + q_term(g).data


def deturck_vectorfield(g: MetricField) -> TensorField:
    """W^k = g^ij (Gamma(g)^k_ij - hat-Gamma^k_ij)."""
    gamma = christoffel(g).data
    background = g.background
    if not background.is_flat:
        gamma = gamma - background.christoffel
    W = np.einsum("...ij,...kij->...k", g.inverse(), gamma)
    return TensorField(g.grid, W, rank=1, time=g.time)


def lie_derivative(g: MetricField, W: TensorField) -> NDArray:
    """(L_W g)_ij = W^k d_k g_ij + g_kj d_i W^k + g_ik d_j W^k."""
    dg = g.partial()
    dW = partial_derivatives(g.grid, W.data, W.parity)
    L = (np.einsum("...k,...kij->...ij", W.data, dg)
         + np.einsum("...kj,...ik->...ij", g.data, dW)
         + np.einsum("...ik,...jk->...ij", g.data, dW))
    return 0.5 * (L + np.swapaxes(L, -1, -2))


def ricci_deturck_oracle(g: MetricField) -> NDArray:
    """-2 Ric(g) + L_W g, assembled from the curvature module."""
    return -2.0 * riemann(g).ricci + lie_derivative(g, deturck_vectorfield(g))


def rhs_identity_error(g: MetricField, interior: Optional[slice] = None) -> float:
    """max |(tr_g hat-nabla^2 g + Q) - (-2 Ric + L_W g)| over regular nodes."""
    difference = np.abs(deturck_rhs(g) - ricci_deturck_oracle(g))
    if interior is not None:
        difference = difference[interior]
    return float(np.nanmax(difference))


# ---------------------------------------------------------------- diagnostics
@dataclass
class DiagnosticsOptions:
    """Which monitors a flow records and how often the expensive ones run."""
    stride: int = 1
    curvature: bool = True
    cones: bool = False
    pic_sample: int = 64
    boundary: bool = True
    symmetry: bool = True
    seed: int = 0

    def __post_init__(self):
        """Validate DiagnosticsOptions after initialization."""
        if self.stride < 1:
            raise ValueError("diagnostics stride must be positive")
        if self.pic_sample < 1:
            raise ValueError("pic_sample must be positive")

    @classmethod
    def from_dict(cls, data: Dict[str, Any], pic_sample: int = 64, seed: int = 0) -> "DiagnosticsOptions":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        known.setdefault("pic_sample", pic_sample)
        known.setdefault("seed", seed)
        return cls(**known)


@dataclass
class FlowTrajectory:
    """Metric per time level plus one diagnostics record per level."""
    mesh: TimeMesh
    metrics: List[MetricField] = field(default_factory=list)
    records: List[DiagnosticsRecord] = field(default_factory=list)
    doubled: bool = False
    halted: bool = False
    halt_reason: Optional[str] = None
    error: Optional[NumericalError] = None

    @property
    def times(self) -> NDArray:
        return self.mesh.times[:len(self.metrics)]

    @property
    def final(self) -> MetricField:
        return self.metrics[-1]

    def values(self) -> NDArray:
        return np.stack([g.data for g in self.metrics])

    def frame(self) -> pd.DataFrame:
        return diagnostics_frame(self.records)

    def smoothing_slope(self, t_min: float, t_max: float) -> float:
        """Log-log slope of max |hat-nabla^2 g| against t."""
        frame = self.frame()
        return fit_loglog_slope(frame["t"].to_numpy(), frame["max_hess_g"].to_numpy(), t_min, t_max)


def diagnose(g: MetricField, step: int, reference: MetricField, options: DiagnosticsOptions,
             doubled: bool = False, expensive: bool = True) -> DiagnosticsRecord:
    """Monitors of one metric; curvature and boundary terms only when ``expensive``."""
    record = DiagnosticsRecord(t=float(g.time or 0.0), step=step)
    record.drift = g.max_difference(reference)
    record.max_grad_g, record.max_hess_g = derivative_maxima(g)
    record.lambda_parabolicity = certify_parabolicity(g).lam
    residual = None
    if doubled and options.symmetry:
        residual = symmetry_residual(g)
        record.symmetry_residual = residual
    if not expensive:
        return record
    if options.curvature:
        bundle = riemann(g)
        record.min_scal = bundle.min_scalar
        _, _, record.min_curv_op_eig = curvature_operator(bundle)
        if options.cones and g.n >= 4:
            margins = margins_summary(bundle, cones=True, sample=options.pic_sample, seed=options.seed)
            record.pic_margin, record.pic1_margin, record.pic2_margin = margins.pic, margins.pic1, margins.pic2
    if doubled and options.boundary:
        if residual is None:
            residual = symmetry_residual(g)
        if residual <= 1e-8:
            forms = boundary_forms_of(g)
            record.boundary_A_norm = max(form.norm for form in forms)
            record.H_min = min(float(np.min(form.H)) for form in forms)
        else:
            get_logger().warning(f"step {step}: symmetry residual {residual:.3e}, boundary form skipped")
    return record


# ---------------------------------------------------------------- time stepping
@log_execution_time
def flow(g0: MetricField, mesh: TimeMesh, theta: float = 1.0,
         options: Optional[DiagnosticsOptions] = None, doubled: bool = False) -> FlowTrajectory:
    """
    Advance the Ricci-DeTurck flow from ``g0`` over ``mesh``.

    Each step freezes the coefficient of the principal part at the current
    metric and treats Q explicitly. A positivity or solver failure halts
    the run and the trajectory up to the last good step is returned.
    """
    logger = get_logger()
    options = options or DiagnosticsOptions()
    g = g0.with_data(g0.data, time=float(mesh.times[0]))
    trajectory = FlowTrajectory(mesh=mesh, doubled=doubled)
    trajectory.metrics.append(g)
    trajectory.records.append(diagnose(g, 0, g0, options, doubled))
    last = mesh.steps
    for k, dt in enumerate(mesh.dt):
        t_next = float(mesh.times[k + 1])
        try:
            source = q_term(g).data
            g_next = step_linear(g, g, source, float(dt), theta)
            g_next.time = t_next
            g_next.cholesky()
        except NumericalError as e:
            if e.details.get("time") is None:
                e.details["time"] = t_next
            trajectory.halted = True
            trajectory.halt_reason = f"{type(e).__name__} at t={t_next:.6g}: {e}"
            trajectory.error = e
            logger.warning(f"flow halted: {trajectory.halt_reason}")
            break
        g = g_next
        step = k + 1
        expensive = step % options.stride == 0 or step == last
        trajectory.metrics.append(g)
        trajectory.records.append(diagnose(g, step, g0, options, doubled, expensive))
        logger.debug(f"deturck step {step}/{last}: t={t_next:.6g} drift={trajectory.records[-1].drift:.3e}")
    return trajectory


# ---------------------------------------------------------------- Picard map
def _trace_with(inverse: NDArray, g: MetricField, eta: MetricField) -> NDArray:
    hessian = hat_hessian(eta, g.background).data
    return np.einsum("...ab,...abij->...ij", inverse, hessian)


def picard_operator(w_path: Sequence[MetricField], g0: MetricField, mesh: TimeMesh) -> List[MetricField]:
    """
    Linearized map w -> eta of the existence argument.

    eta solves d(eta)/dt - tr_g0 d^2 eta = tr_w d^2 w - tr_g0 d^2 w + Q(w)
    with eta(0) = g0, discretized so that a discrete flow trajectory is an
    exact fixed point: the trace terms use w at the new level and Q uses w
    at the old one.
    """
    if len(w_path) != mesh.steps + 1:
        raise ValueError(f"path has {len(w_path)} levels, mesh needs {mesh.steps + 1}")
    g0_inverse = g0.inverse()
    eta = g0.with_data(g0.data, time=0.0)
    result = [eta]
    for k, dt in enumerate(mesh.dt):
        w_old, w_new = w_path[k], w_path[k + 1]
        source = (_trace_with(w_old.inverse(), w_old, w_new)
                  - _trace_with(g0_inverse, g0, w_new)
                  + q_term(w_old).data)
        eta = step_linear(eta, g0, source, float(dt))
        eta.time = float(mesh.times[k + 1])
        result.append(eta)
    return result


def path_difference(first: Sequence[MetricField], second: Sequence[MetricField]) -> NDArray:
    return np.stack([a.data - b.data for a, b in zip(first, second)])


@dataclass
class ContractionResult:
    """Ratio of weighted norms ||R(w1) - R(w2)|| / ||w1 - w2||."""
    T: float
    ratio: float
    numerator: float
    denominator: float
    degenerate: bool = False


def contraction_ratio(w1: Sequence[MetricField], w2: Sequence[MetricField], g0: MetricField,
                      mesh: TimeMesh, alpha: float = 0.5, weight: float = 0.25, k: int = 2) -> ContractionResult:
    """
    Contraction ratio of the Picard map in the weighted Hoelder norm.

    Identical inputs give ratio 0 with ``degenerate`` set.
    """
    grid = g0.grid
    denominator = weighted_norm(mesh.times, path_difference(w1, w2), grid, k, alpha, weight).total
    if denominator == 0.0:
        return ContractionResult(T=mesh.T, ratio=0.0, numerator=0.0, denominator=0.0, degenerate=True)
    images = path_difference(picard_operator(w1, g0, mesh), picard_operator(w2, g0, mesh))
    numerator = weighted_norm(mesh.times, images, grid, k, alpha, weight).total
    return ContractionResult(T=mesh.T, ratio=numerator / denominator, numerator=numerator, denominator=denominator)


def perturbed_path(g0: MetricField, mesh: TimeMesh, perturbation: NDArray, eps: float,
                   beta: float = 0.5) -> List[MetricField]:
    """w(t) = g0 + eps t^beta P, with P symmetrized."""
    P = 0.5 * (perturbation + np.swapaxes(perturbation, -1, -2))
    return [g0.with_data(g0.data + eps * (t ** beta) * P, time=float(t)) for t in mesh.times]


def random_perturbation(g0: MetricField, rng: np.random.Generator, modes: int = 2) -> NDArray:
    """Smooth symmetric perturbation built from low Fourier modes on a periodic grid."""
    grid = g0.grid
    coords = grid.coordinates()
    n = grid.dim
    P = np.zeros(grid.shape + (n, n))
    for i in range(n):
        for j in range(i, n):
            wave = np.zeros(grid.shape)
            for _ in range(modes):
                phase = sum(rng.integers(1, 3) * 2 * np.pi * coords[a] / grid.axis(a).extent for a in range(n))
                wave = wave + rng.normal() * np.cos(phase + rng.uniform(0, 2 * np.pi))
            P[..., i, j] = wave
            P[..., j, i] = wave
    return P


def contraction_sweep(g0: MetricField, T_values: Sequence[float], steps: int, rng: np.random.Generator,
                      eps: float = 1e-2, grading: float = 2.0, alpha: float = 0.5,
                      weight: float = 0.25, k: int = 2) -> tuple:
    """
    Contraction ratios for a seeded perturbation pair over several final times.

    Returns the table (one row per T) and the fitted exponent of ratio
    against T.
    """
    P1 = random_perturbation(g0, rng)
    P2 = random_perturbation(g0, rng)
    rows = []
    for T in T_values:
        mesh = TimeMesh(float(T), steps, grading)
        result = contraction_ratio(perturbed_path(g0, mesh, P1, eps), perturbed_path(g0, mesh, P2, eps),
                                   g0, mesh, alpha, weight, k)
        rows.append({"T": float(T), "ratio": result.ratio, "numerator": result.numerator,
                     "denominator": result.denominator, "degenerate": result.degenerate})
        get_logger().info(f"contraction T={T:.4g}: ratio {result.ratio:.4f}")
    table = pd.DataFrame(rows)
    exponent = float("nan")
    usable = table[(table["ratio"] > 0) & ~table["degenerate"]]
    if len(usable) >= 2:
        exponent = float(np.polyfit(np.log(usable["T"]), np.log(usable["ratio"]), 1)[0])
    return table, exponent
