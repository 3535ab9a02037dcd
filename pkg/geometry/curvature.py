"""
Curvature of grid metrics and algebraic curvature tensors.

Sign convention: R_ijij is the (unnormalized) sectional curvature of the
coordinate plane (i, j), so the unit round sphere has R_ijkl =
g_ik g_jl - g_il g_jk. Curvature-operator matrices use the basis
e_a ^ e_b, a < b, without a 1/sqrt(2) factor: constant curvature k gives
k times the identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from numpy.typing import NDArray

from geometry.grid import Grid
from geometry.tensorfield import MetricField, christoffel, second_partials
from models.data_models import BoundaryForm, ConeMargins, ConeVariant
from utils.decorators import log_execution_time
from utils.exceptions import ConfigurationError, UnsupportedDimensionError
from utils.logger import get_logger

PIC_STARTS = 32
PIC_TOLERANCE = 1e-9
PIC_MAX_ITERATIONS = 500

# (i, j, k, l) frame slots of the isotropic functional and their
# dependence on (lambda, mu): coefficient = c * lam**p * mu**q
_PIC_TERMS = (
    ((0, 2, 0, 2), 1.0, 0, 0),
    ((0, 3, 0, 3), 1.0, 2, 0),
    ((1, 2, 1, 2), 1.0, 0, 2),
    ((1, 3, 1, 3), 1.0, 2, 2),
    ((0, 1, 2, 3), -2.0, 1, 1),
)


@dataclass
class CurvatureBundle:
    """Per-node curvature tensors of one metric."""
    metric: MetricField
    riemann: NDArray
    ricci: NDArray
    scalar: NDArray
    frame_riemann: Optional[NDArray] = None
    operator: Optional[NDArray] = None
    operator_eigenvalues: Optional[NDArray] = None
    margins: Dict[str, float] = field(default_factory=dict)

    @property
    def grid(self) -> Grid:
        return self.metric.grid

    @property
    def min_scalar(self) -> float:
        return float(np.nanmin(self.scalar))


# ------------------------------------------------------------ algebraic tensors
def project_algebraic(R: NDArray) -> NDArray:
    """Project onto tensors with the Riemann symmetries and first Bianchi identity."""
    R = 0.25 * (R - np.swapaxes(R, -4, -3) - np.swapaxes(R, -2, -1)
                + np.swapaxes(np.swapaxes(R, -4, -3), -2, -1))
    R = 0.5 * (R + np.einsum("...ijkl->...klij", R))
    cyclic = (R + np.einsum("...jkil->...ijkl", R) + np.einsum("...kijl->...ijkl", R)) / 3.0
    return R - cyclic


def pair_basis(n: int) -> Tuple[Tuple[int, int], ...]:
    return tuple((a, b) for a in range(n) for b in range(a + 1, n))


def operator_matrix(R: NDArray) -> NDArray:
    """Curvature-operator matrix M_(ab),(cd) = R_abcd over pairs a < b."""
    n = R.shape[-1]
    pairs = pair_basis(n)
    first = np.array([p[0] for p in pairs])
    second = np.array([p[1] for p in pairs])
    M = R[..., first[:, None], second[:, None], first[None, :], second[None, :]]
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def tensor_from_operator(M: NDArray, n: int) -> NDArray:
    """Algebraic tensor whose curvature-operator matrix is ``M`` before Bianchi projection."""
    R = np.zeros(M.shape[:-2] + (n, n, n, n))
    pairs = pair_basis(n)
    for p, (a, b) in enumerate(pairs):
        for q, (c, d) in enumerate(pairs):
            value = M[..., p, q]
            R[..., a, b, c, d] = value
            R[..., b, a, c, d] = -value
            R[..., a, b, d, c] = -value
            R[..., b, a, d, c] = value
    return project_algebraic(R)


def constant_curvature_tensor(n: int, kappa: float, metric: Optional[NDArray] = None) -> NDArray:
    g = np.eye(n) if metric is None else np.asarray(metric, dtype=float)
    return kappa * (np.einsum("...ik,...jl->...ijkl", g, g) - np.einsum("...il,...jk->...ijkl", g, g))


def product_curvature(n1: int, n2: int, kappa1: float = 1.0, kappa2: float = 1.0) -> NDArray:
    """Curvature of a product of two constant-curvature factors in an adapted orthonormal frame."""
    n = n1 + n2
    R = np.zeros((n, n, n, n))
    R[:n1, :n1, :n1, :n1] = constant_curvature_tensor(n1, kappa1)
    R[n1:, n1:, n1:, n1:] = constant_curvature_tensor(n2, kappa2)
    return R


def sectional_curvature(bundle: CurvatureBundle, i: int, j: int) -> NDArray:
    """Sectional curvature of the coordinate plane (i, j) at every node."""
    g = bundle.metric.data
    area = g[..., i, i] * g[..., j, j] - g[..., i, j] ** 2
    return bundle.riemann[..., i, j, i, j] / area


# ------------------------------------------------------------------- Riemann
def riemann(g: MetricField) -> CurvatureBundle:
    """Coordinate Riemann tensor, Ricci tensor and scalar curvature of ``g``."""
    d2 = second_partials(g.grid, g.data, g.parity)
    gamma = christoffel(g).data
    metric = g.data
    R = 0.5 * (np.einsum("...iljk->...ijkl", d2)
               + np.einsum("...jkil->...ijkl", d2)
               - np.einsum("...jlik->...ijkl", d2)
               - np.einsum("...ikjl->...ijkl", d2))
    R = R + (np.einsum("...np,...nil,...pjk->...ijkl", metric, gamma, gamma)
             - np.einsum("...np,...njl,...pik->...ijkl", metric, gamma, gamma))
    R = project_algebraic(R)
    inverse = g.inverse()
    ricci = np.einsum("...ik,...ijkl->...jl", inverse, R)
    ricci = 0.5 * (ricci + np.swapaxes(ricci, -1, -2))
    scalar = np.einsum("...jl,...jl->...", inverse, ricci)
    return CurvatureBundle(metric=g, riemann=R, ricci=ricci, scalar=scalar)


def curvature_operator(bundle: CurvatureBundle) -> Tuple[NDArray, NDArray, float]:
    """
    Orthonormal-frame curvature operator per node.

    Returns the matrices, the smallest eigenvalue per node and the global
    minimum over regular nodes.
    """
    if bundle.operator is None:
        frames = bundle.metric.frames()
        frame_riemann = np.einsum("...ijkl,...ia,...jb,...kc,...ld->...abcd",
                                  bundle.riemann, frames, frames, frames, frames)
        M = operator_matrix(frame_riemann)
        regular = np.all(np.isfinite(M), axis=(-2, -1))
        eigenvalues = np.full(M.shape[:-2], np.nan)
        eigenvalues[regular] = np.linalg.eigvalsh(M[regular]).min(axis=-1)
        bundle.frame_riemann = frame_riemann
        bundle.operator = M
        bundle.operator_eigenvalues = eigenvalues
    return bundle.operator, bundle.operator_eigenvalues, float(np.nanmin(bundle.operator_eigenvalues))


# -------------------------------------------------------- isotropic curvature
@dataclass
class IsotropicMinimum:
    """Minimum of the isotropic frame functional and where it is attained."""
    value: float
    frame: NDArray
    lam: float
    mu: float
    node: Optional[Tuple[int, ...]] = None

    @property
    def normalized(self) -> float:
        """Complex sectional curvature of the attaining plane span(e1 + i mu e2, e3 + i lam e4)."""
        return self.value / ((1.0 + self.lam ** 2) * (1.0 + self.mu ** 2))


def _frame_terms(R: NDArray, E: NDArray) -> Tuple[NDArray, NDArray]:
    """P[s,a,j,k,l] = R_abcd E_bj E_ck E_dl and the frame components RE[s,i,j,k,l]."""
    P = np.einsum("abcd,sbj,sck,sdl->sajkl", R, E, E, E)
    RE = np.einsum("sai,sajkl->sijkl", E, P)
    return P, RE


def _functional(RE: NDArray, lam: NDArray, mu: NDArray) -> NDArray:
    total = np.zeros(RE.shape[0])
    for (i, j, k, l), c, p, q in _PIC_TERMS:
        total = total + c * lam ** p * mu ** q * RE[:, i, j, k, l]
    return total


def _gradient(P: NDArray, lam: NDArray, mu: NDArray) -> NDArray:
    starts, n = P.shape[0], P.shape[1]
    G = np.zeros((starts, n, 4))
    for (i, j, k, l), c, p, q in _PIC_TERMS:
        coef = (c * lam ** p * mu ** q)[:, None]
        G[:, :, i] += coef * P[:, :, j, k, l]
        G[:, :, j] -= coef * P[:, :, i, k, l]
        G[:, :, k] += coef * P[:, :, l, i, j]
        G[:, :, l] -= coef * P[:, :, k, i, j]
    return G


def _clipped_quadratic(a: NDArray, b: NDArray) -> NDArray:
    """argmin over [0, 1] of a x^2 - 2 b x."""
    interior = np.clip(np.divide(b, a, out=np.zeros_like(b), where=a > 0), 0.0, 1.0)
    endpoint = np.where(a - 2.0 * b < 0.0, 1.0, 0.0)
    return np.where(a > 0, interior, endpoint)


def _update_parameters(RE: NDArray, lam: NDArray, mu: NDArray, variant: ConeVariant) -> Tuple[NDArray, NDArray]:
    if variant is ConeVariant.PIC:
        return lam, mu
    r1414, r2424, r2323, r1234 = (RE[:, 0, 3, 0, 3], RE[:, 1, 3, 1, 3],
                                  RE[:, 1, 2, 1, 2], RE[:, 0, 1, 2, 3])
    lam = _clipped_quadratic(r1414 + mu * mu * r2424, mu * r1234)
    if variant is ConeVariant.PIC2:
        mu = _clipped_quadratic(r2323 + lam * lam * r2424, lam * r1234)
    return lam, mu


def _cayley(E: NDArray, A: NDArray, tau: NDArray) -> NDArray:
    eye = np.eye(E.shape[1])
    half = 0.5 * tau[:, None, None] * A
    return np.linalg.solve(eye + half, np.einsum("sij,sjk->sik", eye - half, E))


def _descend(R: NDArray, E: NDArray, lam: NDArray, mu: NDArray, variant: ConeVariant,
             tol: float, max_iter: int) -> Tuple[NDArray, NDArray, NDArray, NDArray]:
    """Monotone Cayley descent on 4-frames with exact (lam, mu) updates."""
    tau = np.ones(E.shape[0])
    active = np.ones(E.shape[0], dtype=bool)
    P, RE = _frame_terms(R, E)
    value = _functional(RE, lam, mu)
    for _ in range(max_iter):
        lam, mu = _update_parameters(RE, lam, mu, variant)
        value = _functional(RE, lam, mu)
        G = _gradient(P, lam, mu)
        A = np.einsum("sik,sjk->sij", G, E) - np.einsum("sik,sjk->sij", E, G)
        size = np.sqrt(np.sum(A * A, axis=(1, 2)))
        active &= size > tol
        if not active.any():
            break
        decrease = 0.5 * size ** 2
        accepted = ~active
        trial_tau = np.minimum(2.0 * tau, 10.0)
        new_E = E.copy()
        for _ in range(40):
            pending = ~accepted
            if not pending.any():
                break
            idx = np.flatnonzero(pending)
            candidate = _cayley(E[idx], A[idx], trial_tau[idx])
            _, cand_RE = _frame_terms(R, candidate)
            cand_value = _functional(cand_RE, lam[idx], mu[idx])
            ok = cand_value <= value[idx] - 1e-4 * trial_tau[idx] * decrease[idx]
            new_E[idx[ok]] = candidate[ok]
            accepted[idx[ok]] = True
            trial_tau[idx[~ok]] *= 0.5
        stalled = ~accepted
        active &= ~stalled
        tau = np.where(accepted, trial_tau, tau)
        # re-orthonormalize to stop drift off the Stiefel manifold
        E, _ = np.linalg.qr(new_E)
        E = E * np.sign(np.einsum("sii->si", np.einsum("sji,sjk->sik", E, new_E)))[:, None, :]
        P, RE = _frame_terms(R, E)
    lam, mu = _update_parameters(RE, lam, mu, variant)
    value = _functional(RE, lam, mu)
    return E, lam, mu, value


def random_frames(n: int, count: int, rng: np.random.Generator) -> NDArray:
    """``count`` random orthonormal 4-frames in R^n, the first one the coordinate frame."""
    frames = np.empty((count, n, 4))
    frames[0] = np.eye(n)[:, :4]
    for s in range(1, count):
        q, r = np.linalg.qr(rng.standard_normal((n, n)))
        q = q * np.sign(np.diag(r))
        frames[s] = q[:, :4]
    return frames


def isotropic_minima(R: NDArray, rng: np.random.Generator, starts: int = PIC_STARTS,
                     variants: Tuple[ConeVariant, ...] = (ConeVariant.PIC, ConeVariant.PIC1, ConeVariant.PIC2),
                     tol: float = PIC_TOLERANCE, max_iter: int = PIC_MAX_ITERATIONS) -> Dict[ConeVariant, IsotropicMinimum]:
    """
    Minimize the isotropic frame functional of an orthonormal-frame tensor.

    Each variant is seeded from the final frames of the previous one, so
    the reported minima satisfy PIC2 <= PIC1 <= PIC.
    """
    n = R.shape[-1]
    if n < 4:
        raise UnsupportedDimensionError(f"isotropic curvature needs n >= 4, got n = {n}")
    E = random_frames(n, starts, rng)
    lam = np.ones(starts)
    mu = np.ones(starts)
    results: Dict[ConeVariant, IsotropicMinimum] = {}
    for variant in (ConeVariant.PIC, ConeVariant.PIC1, ConeVariant.PIC2):
        E, lam, mu, value = _descend(R, E, lam, mu, variant, tol, max_iter)
        best = int(np.argmin(value))
        results[variant] = IsotropicMinimum(float(value[best]), E[best].copy(), float(lam[best]), float(mu[best]))
        if variant is variants[-1]:
            break
    return {v: results[v] for v in variants}


@log_execution_time
def pic_margin(bundle: CurvatureBundle, variant: ConeVariant = ConeVariant.PIC,
               sample: Optional[int] = None, seed: int = 0,
               starts: int = PIC_STARTS) -> IsotropicMinimum:
    """
    Global minimum of the isotropic frame functional over grid nodes.

    With ``sample`` set, only that many nodes with the smallest
    curvature-operator eigenvalue are searched.
    """
    variant = ConeVariant(variant) if isinstance(variant, str) else variant
    margins = cone_margins(bundle, sample=sample, seed=seed, starts=starts, upto=variant)
    return margins[variant]


def cone_margins(bundle: CurvatureBundle, sample: Optional[int] = None, seed: int = 0,
                 starts: int = PIC_STARTS, upto: ConeVariant = ConeVariant.PIC2) -> Dict[ConeVariant, IsotropicMinimum]:
    n = bundle.metric.n
    if n < 4:
        raise UnsupportedDimensionError(f"isotropic curvature needs n >= 4, got n = {n}")
    _, eigenvalues, _ = curvature_operator(bundle)
    flat_eigs = eigenvalues.ravel()
    candidates = np.flatnonzero(np.isfinite(flat_eigs))
    if sample is not None and sample < candidates.size:
        candidates = candidates[np.argsort(flat_eigs[candidates], kind="stable")[:sample]]
    order = (ConeVariant.PIC, ConeVariant.PIC1, ConeVariant.PIC2)
    variants = order[:order.index(upto) + 1]
    rng = np.random.default_rng(seed)
    tensors = bundle.frame_riemann.reshape((-1,) + (n,) * 4)
    best: Dict[ConeVariant, IsotropicMinimum] = {}
    for linear in candidates:
        node = tuple(int(i) for i in np.unravel_index(linear, eigenvalues.shape))
        for variant, result in isotropic_minima(tensors[linear], rng, starts, variants).items():
            if variant not in best or result.value < best[variant].value:
                result.node = node
                best[variant] = result
    for variant, result in best.items():
        bundle.margins[variant.value] = result.value
    get_logger().debug(f"cone margins over {candidates.size} nodes: "
                       + ", ".join(f"{v.value}={r.value:.6g}" for v, r in best.items()))
    return best


def margins_summary(bundle: CurvatureBundle, cones: bool = False, sample: Optional[int] = None,
                    seed: int = 0) -> ConeMargins:
    """Scalar, curvature-operator and (optionally) isotropic margins of one metric."""
    _, _, min_eig = curvature_operator(bundle)
    summary = ConeMargins(min_scalar=bundle.min_scalar, min_curvature_operator=min_eig)
    if cones:
        found = cone_margins(bundle, sample=sample, seed=seed)
        summary.pic = found[ConeVariant.PIC].value
        summary.pic1 = found[ConeVariant.PIC1].value
        summary.pic2 = found[ConeVariant.PIC2].value
    return summary


def _bilinear(u: NDArray, v: NDArray) -> NDArray:
    return np.einsum("si,si->s", u, v)


def _isotropic(v: NDArray) -> NDArray:
    """Gram-Schmidt projection of complex vectors onto the null cone: Im v orthogonal to Re v, same length."""
    a, b = v.real, v.imag
    a_sq = np.einsum("si,si->s", a, a)
    b = b - (np.einsum("si,si->s", a, b) / a_sq)[:, None] * a
    b = b * np.sqrt(a_sq / np.einsum("si,si->s", b, b))[:, None]
    return a + 1j * b


def _constrained_pairs(variant: ConeVariant, count: int, n: int,
                       rng: np.random.Generator) -> Tuple[NDArray, NDArray]:
    """
    Generic complex pairs (z, w) projected onto the constraint set of ``variant``.

    PIC2 keeps any pair. PIC1 makes z null and w orthogonal to z in the
    complex bilinear form, so g(z,z) g(w,w) = g(z,w)^2. PIC also moves w
    off span(Re z, Im z) and makes it null, so g(z,z) = g(w,w) = g(z,w) = 0.
    """
    z = rng.standard_normal((count, n)) + 1j * rng.standard_normal((count, n))
    w = rng.standard_normal((count, n)) + 1j * rng.standard_normal((count, n))
    if variant is ConeVariant.PIC2:
        return z, w
    z = _isotropic(z)
    if variant is ConeVariant.PIC1:
        size = np.einsum("si,si->s", z, np.conj(z)).real
        return z, w - (_bilinear(w, z) / size)[:, None] * np.conj(z)
    for e in (z.real, z.imag):
        e = e / np.linalg.norm(e, axis=1, keepdims=True)
        w = w - _bilinear(w, e)[:, None] * e
    return z, _isotropic(w)


def complex_sectional_oracle(R: NDArray, variant: ConeVariant = ConeVariant.PIC,
                             samples: int = 100_000, seed: int = 0, chunk: int = 10_000) -> float:
    """
    Brute-force minimum of the complex sectional curvature over sampled planes.

    Pairs of generic complex vectors are projected onto the constraint set
    of ``variant`` and R(z, w, conj z, conj w) is divided by
    |z ^ w|^2 = |z|^2 |w|^2 - |<z, w>|^2. Nothing here uses orthonormal
    4-frames or the (lam, mu) parametrization, so the result checks the
    frame descent independently. Values are normalized: constant curvature
    k gives k for every variant, and a frame minimum compares through
    ``IsotropicMinimum.normalized``.
    """
    variant = ConeVariant(variant) if isinstance(variant, str) else variant
    n = R.shape[-1]
    if n < 4:
        raise UnsupportedDimensionError(f"isotropic curvature needs n >= 4, got n = {n}")
    rng = np.random.default_rng(seed)
    best = np.inf
    remaining = samples
    while remaining > 0:
        count = min(chunk, remaining)
        remaining -= count
        z, w = _constrained_pairs(variant, count, n, rng)
        values = np.einsum("abcd,sa,sb,sc,sd->s", R, z, w, np.conj(z), np.conj(w), optimize=True).real
        z_sq = np.einsum("si,si->s", z, np.conj(z)).real
        w_sq = np.einsum("si,si->s", w, np.conj(w)).real
        area = z_sq * w_sq - np.abs(np.einsum("si,si->s", z, np.conj(w))) ** 2
        keep = area > 1e-12 * z_sq * w_sq
        if np.any(keep):
            best = min(best, float(np.min(values[keep] / area[keep])))
    return best


# ------------------------------------------------------------ boundary form
def _one_sided_axis0(grid: Grid, data: NDArray, index: int, side: int) -> NDArray:
    """Second-order one-sided d/dx0 at an axis-0 slice, pointing into the half."""
    n = grid.shape[0]
    periodic = grid.axis(0).periodic

    def node(offset):
        k = index + side * offset
        if periodic:
            k %= n
        elif not 0 <= k < n:
            raise ConfigurationError(f"slice {index} leaves no room for a one-sided difference")
        return data[k]

    return side * (-3.0 * node(0) + 4.0 * node(1) - node(2)) / (2.0 * grid.spacings[0])


def boundary_form(g: MetricField, slice_index: int, side: int, axis: int = 0,
                  tolerance: float = -1e-8) -> BoundaryForm:
    """
    Second fundamental form of the axis-0 slice ``x0 = x_s``.

    ``side`` = +1 when the half domain is x0 >= x_s and -1 when it is
    x0 <= x_s. A_ab = <nabla_a d_b, nu> for the unit normal nu pointing into
    the half, so a geodesic ball smaller than a hemisphere is convex.
    """
    if axis != 0:
        raise ConfigurationError("boundary forms are only defined on slices normal to axis 0")
    if side not in (1, -1):
        raise ValueError("side must be +1 or -1")
    grid = g.grid
    if grid.dim < 2:
        raise UnsupportedDimensionError("a boundary slice needs at least one tangential direction")
    n = grid.dim
    data = g.data
    dg = np.empty(grid.shape[1:] + (n, n, n))
    dg[..., 0, :, :] = _one_sided_axis0(grid, data, slice_index, side)
    for a in range(1, n):
        dg[..., a, :, :] = grid.diff1(data, a)[slice_index]
    lowered = 0.5 * (np.einsum("...ijl->...lij", dg) + np.einsum("...jil->...lij", dg) - dg)
    inverse = g.inverse()[slice_index]
    gamma0 = np.einsum("...l,...lij->...ij", inverse[..., 0, :], lowered)
    A = side * gamma0[..., 1:, 1:] / np.sqrt(inverse[..., 0, 0])[..., None, None]
    A = 0.5 * (A + np.swapaxes(A, -1, -2))
    induced = data[slice_index][..., 1:, 1:]
    L = np.linalg.cholesky(induced)
    Linv = np.linalg.inv(L)
    shape_operator = np.einsum("...ij,...jk,...lk->...il", Linv, A, Linv)
    eigenvalues = np.linalg.eigvalsh(shape_operator)
    H = np.einsum("...ij,...ij->...", np.linalg.inv(induced), A)
    return BoundaryForm(A=A, induced=induced, eigenvalues=eigenvalues, H=H,
                        slice_index=slice_index, side=side, tolerance=tolerance)
