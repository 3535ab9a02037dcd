"""
Tensor fields over a structured grid.

Components are stored after the grid axes, ``data.shape == (*grid.shape,
n, ..., n)``. An index pointing along axis 0 flips the reflection parity of
a component, so component parity is (-1) to the number of zero indices.
Derivative slots are always placed first among the component axes.
"""

from __future__ import annotations

import math
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray
from scipy import ndimage

from geometry.grid import Grid
from models.data_models import AxisTopology, BackgroundMode, WeightedNormReport
from utils.exceptions import (
    ConfigurationError,
    PositivityError,
    UnsupportedDimensionError,
)
from utils.logger import get_logger

_SLOT_LETTERS = "bcdefghijkl"

# frozen once from calibrate_product_constant on random smooth paths
PRODUCT_CONSTANT = 4.0


def component_parity(rank: int, n: int) -> NDArray:
    """Reflection sign of every component of a rank-``rank`` tensor."""
    if rank == 0:
        return np.array(1.0)
    zeros = sum((idx == 0).astype(int) for idx in np.indices((n,) * rank))
    return np.where(zeros % 2 == 0, 1.0, -1.0)


def frobenius(data: NDArray, grid_dim: int) -> NDArray:
    """Pointwise Frobenius norm over the component axes."""
    data = np.asarray(data, dtype=float)
    if data.ndim == grid_dim:
        return np.abs(data)
    axes = tuple(range(grid_dim, data.ndim))
    return np.sqrt(np.sum(data * data, axis=axes))


class TensorField:
    """A covariant tensor field of given rank on a grid."""

    def __init__(self, grid: Grid, data: NDArray, rank: Optional[int] = None,
                 parity: Optional[NDArray] = None, time: Optional[float] = None):
        data = np.array(data, dtype=float)
        if rank is None:
            rank = data.ndim - grid.dim
        expected = grid.shape + (grid.dim,) * rank
        if data.shape != expected:
            raise ValueError(f"tensor data has shape {data.shape}, expected {expected}")
        self.grid = grid
        self.rank = rank
        self.time = time
        self.parity = component_parity(rank, grid.dim) if parity is None else np.asarray(parity, dtype=float)
        self._data = data
        self._data.flags.writeable = False

    @property
    def n(self) -> int:
        return self.grid.dim

    @property
    def data(self) -> NDArray:
        """Read-only component array; assign or use :meth:`write` to change it."""
        return self._data

    @data.setter
    def data(self, value: NDArray) -> None:
        value = np.array(value, dtype=float)
        if value.shape != self._data.shape:
            raise ValueError(f"cannot replace data of shape {self._data.shape} with {value.shape}")
        self._store(value)

    def write(self, index, value) -> None:
        """Write components at ``index`` and drop any cached factorizations."""
        updated = self._data.copy()
        updated[index] = value
        self._store(updated)

    def _store(self, value: NDArray) -> None:
        value.flags.writeable = False
        self._data = value
        self._invalidate()

    def _invalidate(self) -> None:
        pass

    def copy(self) -> "TensorField":
        return TensorField(self.grid, self._data, self.rank, self.parity, self.time)

    def partial(self) -> NDArray:
        """Coordinate gradient, derivative slot first."""
        return partial_derivatives(self.grid, self._data, self.parity)

    def norm(self) -> NDArray:
        return frobenius(self._data, self.grid.dim)


def partial_derivatives(grid: Grid, data: NDArray, parity) -> NDArray:
    return np.stack([grid.diff1(data, axis, parity) for axis in range(grid.dim)], axis=grid.dim)


def second_partials(grid: Grid, data: NDArray, parity) -> NDArray:
    """All second partials d_a d_b, slots (a, b) first."""
    n = grid.dim
    out = np.empty(grid.shape + (n, n) + np.shape(data)[grid.dim:])
    lead = (slice(None),) * grid.dim
    for a in range(n):
        for b in range(a, n):
            value = grid.diff2(data, a, b, parity)
            out[lead + (a, b)] = value
            if b != a:
                out[lead + (b, a)] = value
    return out


class MetricField(TensorField):
    """
    Symmetric positive-definite 2-tensor field.

    The inverse, Cholesky factors and orthonormal frames are computed lazily
    and dropped on any write. Pole nodes of polar charts are skipped during
    factorization and carry NaN in the cached fields.
    """

    def __init__(self, grid: Grid, data: NDArray, background: Optional["BackgroundMetric"] = None,
                 time: Optional[float] = None):
        data = np.asarray(data, dtype=float)
        data = 0.5 * (data + np.swapaxes(data, -1, -2))
        super().__init__(grid, data, rank=2, time=time)
        self._background = background
        self._poles = grid.pole_mask()
        self._invalidate()

    def _invalidate(self) -> None:
        self._inverse = None
        self._cholesky = None
        self._frames = None

    def _store(self, value: NDArray) -> None:
        value = 0.5 * (value + np.swapaxes(value, -1, -2))
        super()._store(value)

    @property
    def background(self) -> "BackgroundMetric":
        if self._background is None:
            self._background = BackgroundMetric(self.grid, BackgroundMode.FLAT_TORUS)
        return self._background

    def copy(self) -> "MetricField":
        return MetricField(self.grid, self._data, self._background, self.time)

    def with_data(self, data: NDArray, time: Optional[float] = None) -> "MetricField":
        return MetricField(self.grid, data, self._background, self.time if time is None else time)

    def _regularized(self) -> NDArray:
        if not self._poles.any():
            return self._data
        data = self._data.copy()
        data[self._poles] = np.eye(self.n)
        return data

    def _blank_poles(self, values: NDArray) -> NDArray:
        if self._poles.any():
            values = values.copy()
            values[self._poles] = np.nan
        return values

    def _raise_positivity(self, data: NDArray) -> None:
        finite = np.all(np.isfinite(data), axis=(-2, -1))
        if not finite.all():
            node = tuple(int(i) for i in np.argwhere(~finite)[0])
            raise PositivityError(f"metric is not finite at node {node}", node=node, time=self.time)
        eigenvalues = np.linalg.eigvalsh(data).min(axis=-1)
        node = tuple(int(i) for i in np.unravel_index(np.argmin(eigenvalues), eigenvalues.shape))
        value = float(eigenvalues[node])
        raise PositivityError(
            f"metric is not positive definite at node {node} (min eigenvalue {value:.3e})",
            node=node, time=self.time, min_eigenvalue=value,
        )

    def cholesky(self) -> NDArray:
        """Lower Cholesky factors per node; raises PositivityError naming the node."""
        if self._cholesky is None:
            data = self._regularized()
            if not np.all(np.isfinite(data)):
                self._raise_positivity(data)
            try:
                factors = np.linalg.cholesky(data)
            except np.linalg.LinAlgError:
                self._raise_positivity(data)
            self._cholesky = self._blank_poles(factors)
        return self._cholesky

    def inverse(self) -> NDArray:
        if self._inverse is None:
            self.cholesky()
            inv = np.linalg.inv(self._regularized())
            inv = 0.5 * (inv + np.swapaxes(inv, -1, -2))
            self._inverse = self._blank_poles(inv)
        return self._inverse

    def frames(self) -> NDArray:
        """Orthonormal frames F = L^-T (columns), so F^T g F = identity."""
        if self._frames is None:
            factors = self.cholesky()
            if self._poles.any():
                factors = factors.copy()
                factors[self._poles] = np.eye(self.n)
            frames = np.swapaxes(np.linalg.inv(factors), -1, -2)
            self._frames = self._blank_poles(frames)
        return self._frames

    def min_eigenvalue(self) -> float:
        eigenvalues = np.linalg.eigvalsh(self._regularized()).min(axis=-1)
        eigenvalues = np.where(self._poles, np.nan, eigenvalues)
        return float(np.nanmin(eigenvalues))

    def max_difference(self, other: "MetricField") -> float:
        return float(np.nanmax(np.abs(self._data - other.data)))


class BackgroundMetric:
    """
    Reference metric supplying the connection of the hat derivatives.

    ``FLAT_TORUS`` is the identity in chart coordinates. ``ROUND_SPHERE``
    is the unit round metric on the chart (x, theta) with x polar on
    [0, pi] and theta periodic.
    """

    def __init__(self, grid: Grid, mode: BackgroundMode = BackgroundMode.FLAT_TORUS):
        self.grid = grid
        self.mode = BackgroundMode(mode) if isinstance(mode, str) else mode
        n = grid.dim
        if self.mode is BackgroundMode.FLAT_TORUS:
            self.metric = np.broadcast_to(np.eye(n), grid.shape + (n, n)).copy()
            self.inverse = self.metric.copy()
            self.christoffel = np.zeros(grid.shape + (n, n, n))
            self.riemann = np.zeros(grid.shape + (n, n, n, n))
            return
        self._build_round()

    def _build_round(self) -> None:
        grid = self.grid
        if grid.dim != 2:
            raise UnsupportedDimensionError("round background is only available on the 2-D polar chart")
        axis0 = grid.axis(0)
        if axis0.topology is not AxisTopology.POLAR or not grid.axis(1).periodic:
            raise ConfigurationError("round background needs a polar axis 0 and a periodic axis 1")
        x = grid.coordinates()[0]
        s, c = np.sin(x), np.cos(x)
        poles = grid.pole_mask()
        metric = np.zeros(grid.shape + (2, 2))
        metric[..., 0, 0] = 1.0
        metric[..., 1, 1] = s * s
        inverse = np.zeros_like(metric)
        inverse[..., 0, 0] = 1.0
        with np.errstate(divide="ignore"):
            inverse[..., 1, 1] = 1.0 / (s * s)
            cot = c / s
        gamma = np.zeros(grid.shape + (2, 2, 2))
        gamma[..., 0, 1, 1] = -s * c
        gamma[..., 1, 0, 1] = cot
        gamma[..., 1, 1, 0] = cot
        inverse[poles] = np.nan
        gamma[poles] = np.nan
        self.metric = metric
        self.inverse = inverse
        self.christoffel = gamma
        self.riemann = (np.einsum("...ik,...jl->...ijkl", metric, metric)
                        - np.einsum("...il,...jk->...ijkl", metric, metric))

    @property
    def is_flat(self) -> bool:
        return self.mode is BackgroundMode.FLAT_TORUS

    def metric_field(self, scale: float = 1.0) -> MetricField:
        return MetricField(self.grid, scale * self.metric, background=self)


def christoffel(g: MetricField) -> TensorField:
    """Gamma^k_ij of g, stored as ``[..., k, i, j]``."""
    dg = g.partial()
    lowered = 0.5 * (np.einsum("...ijl->...lij", dg)
                     + np.einsum("...jil->...lij", dg)
                     - dg)
    gamma = np.einsum("...kl,...lij->...kij", g.inverse(), lowered)
    return TensorField(g.grid, gamma, rank=3, time=g.time)


def _connection_terms(gamma: NDArray, data: NDArray, rank: int, grid: Grid) -> NDArray:
    """Sum over slots of Gamma^m_{a i_s} eta_{..m..}, derivative slot a first."""
    if rank == 0:
        return np.zeros(grid.shape + (grid.dim,))
    letters = _SLOT_LETTERS[:rank]
    total = np.zeros(grid.shape + (grid.dim,) * (rank + 1))
    for slot in range(rank):
        eta = letters[:slot] + "m" + letters[slot + 1:]
        total = total + np.einsum(f"...ma{letters[slot]},...{eta}->...a{letters}", gamma, data)
    return total


def _background_of(eta: TensorField, background: Optional[BackgroundMetric]) -> BackgroundMetric:
    if background is not None:
        return background
    if isinstance(eta, MetricField):
        return eta.background
    return BackgroundMetric(eta.grid, BackgroundMode.FLAT_TORUS)


def hat_gradient(eta: TensorField, background: Optional[BackgroundMetric] = None) -> TensorField:
    """Background covariant derivative, new slot first."""
    background = _background_of(eta, background)
    grad = eta.partial()
    if not background.is_flat:
        grad = grad - _connection_terms(background.christoffel, eta.data, eta.rank, eta.grid)
    return TensorField(eta.grid, grad, rank=eta.rank + 1, time=eta.time)


def hat_hessian(eta: TensorField, background: Optional[BackgroundMetric] = None) -> TensorField:
    """
    Second background covariant derivative, ``[a, b, ...] = hat-nabla_a hat-nabla_b eta``.

    In flat mode this is the componentwise second difference. In round mode
    values at pole nodes and their neighbours are NaN.
    """
    background = _background_of(eta, background)
    grid = eta.grid
    hessian = second_partials(grid, eta.data, eta.parity)
    if not background.is_flat:
        gamma = background.christoffel
        inner = _connection_terms(gamma, eta.data, eta.rank, grid)
        grad = hat_gradient(eta, background).data
        hessian = (hessian
                   - partial_derivatives(grid, inner, component_parity(eta.rank + 1, grid.dim))
                   - _connection_terms(gamma, grad, eta.rank + 1, grid))
    return TensorField(grid, hessian, rank=eta.rank + 2, time=eta.time)


# ---------------------------------------------------------------- Hoelder norms
def _offsets(max_sep: int, samples: int) -> NDArray:
    if max_sep < 2:
        return np.array([], dtype=int)
    if max_sep <= 2 * samples:
        return np.arange(2, max_sep + 1)
    picks = np.unique(np.round(np.geomspace(2, max_sep, samples)).astype(int))
    return np.union1d(picks, [max_sep])


def _level_subset(count: int, max_levels: int) -> NDArray:
    return np.unique(np.round(np.linspace(0, count - 1, min(count, max_levels))).astype(int))


def _shifted_difference(first: NDArray, second: NDArray, axis: int, offset: int, periodic: bool) -> NDArray:
    if periodic:
        return np.abs(np.roll(second, -offset, axis=axis) - first)
    n = first.shape[axis]
    lo = [slice(None)] * first.ndim
    hi = [slice(None)] * first.ndim
    lo[axis] = slice(0, n - offset)
    hi[axis] = slice(offset, n)
    return np.abs(second[tuple(hi)] - first[tuple(lo)])


def _nanmax(values: NDArray) -> float:
    finite = values[np.isfinite(values)]
    return float(finite.max()) if finite.size else 0.0


def holder_seminorm(times: Sequence[float], values: NDArray, grid: Grid, alpha: float,
                    window: Optional[Tuple[float, float]] = None,
                    offset_samples: int = 32, max_levels: int = 8) -> float:
    """
    Discrete parabolic Hoelder seminorm of a time-indexed field.

    ``values`` has shape (levels, *grid.shape, *components). Spatial pairs
    are separated along one axis by at least two nodes; time pairs at the
    same node are included. The largest ratio over components is returned.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    times = np.atleast_1d(np.asarray(times, dtype=float))
    values = np.asarray(values, dtype=float)
    if values.shape[0] != times.size:
        raise ValueError("one value array per time level is required")
    if window is not None:
        t1, t2 = window
        steps = np.diff(times)
        if t2 < t1 or (steps.size and t2 - t1 < steps.min()):
            raise ValueError(f"window [{t1}, {t2}] is shorter than one time step")
        slack = 1e-12 * max(abs(t2), 1.0)
        inside = (times >= t1 - slack) & (times <= t2 + slack)
        if not inside.any():
            raise ValueError(f"window [{t1}, {t2}] contains no time level")
        times, values = times[inside], values[inside]

    picks = _level_subset(times.size, max_levels)
    times, values = times[picks], values[picks]
    best = 0.0
    for p in range(times.size):
        for q in range(p, times.size):
            dt_term = abs(times[q] - times[p]) ** (alpha / 2.0)
            a, b = values[p], values[q]
            if q != p:
                best = max(best, _nanmax(np.abs(b - a)) / dt_term)
            orderings = ((a, b), (b, a)) if q != p else ((a, b),)
            for axis, spec in enumerate(grid.spec.axes):
                max_sep = spec.resolution // 2 if spec.periodic else spec.resolution - 1
                for offset in _offsets(max_sep, offset_samples):
                    denominator = (offset * spec.spacing) ** alpha + dt_term
                    for first, second in orderings:
                        diff = _shifted_difference(first, second, axis, int(offset), spec.periodic)
                        best = max(best, _nanmax(diff) / denominator)
    return best


def dyadic_scales(times: Sequence[float]) -> NDArray:
    """sigma_j = T 2^-j for j = 0..floor(log2(T / (8 dt_min)))."""
    times = np.asarray(times, dtype=float)
    T = float(times[-1])
    ratio = T / (8.0 * float(np.diff(times).min()))
    levels = int(math.floor(math.log2(ratio))) + 1 if ratio >= 1.0 else 0
    return T * 2.0 ** -np.arange(levels)


def _derivative_stack(times: NDArray, values: NDArray, grid: Grid, k: int,
                      background: Optional[BackgroundMetric]) -> list:
    stacks = [values]
    current = values
    for _ in range(k):
        current = np.stack([
            hat_gradient(TensorField(grid, level), background).data for level in current
        ])
        stacks.append(current)
    return stacks


def weighted_norm(times: Sequence[float], values: NDArray, grid: Grid, k: int, alpha: float,
                  weight: float, background: Optional[BackgroundMetric] = None) -> WeightedNormReport:
    """
    Weighted parabolic Hoelder norm over dyadic time windows (sigma/2, sigma].

    For each order i <= k the report carries
    ``C{i} = sigma^(weight + i/2) * max |hat-nabla^i eta|`` and
    ``H{i} = sigma^(weight + alpha/2 + i/2) * [hat-nabla^i eta]``.
    ``total`` adds the suprema of both families; ``sup_total`` keeps the
    ``C{i}`` terms only.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if times.size < 2:
        raise ValueError("a trajectory needs at least two time levels")
    scales = dyadic_scales(times)
    if scales.size < 2:
        raise ValueError("the time mesh resolves fewer than 2 dyadic scales")
    stacks = _derivative_stack(times, values, grid, k, background)

    components: Dict[str, NDArray] = {}
    for i, stack in enumerate(stacks):
        sup_terms = np.zeros(scales.size)
        holder_terms = np.zeros(scales.size)
        for j, sigma in enumerate(scales):
            slack = 1e-12 * sigma
            inside = (times > sigma / 2.0 + slack) & (times <= sigma + slack)
            if not inside.any():
                continue
            sup_terms[j] = sigma ** (weight + i / 2.0) * _nanmax(frobenius(stack[inside], grid.dim + 1))
            seminorm = holder_seminorm(times[inside], stack[inside], grid, alpha,
                                       offset_samples=16, max_levels=6)
            holder_terms[j] = sigma ** (weight + alpha / 2.0 + i / 2.0) * seminorm
        components[f"C{i}"] = sup_terms
        components[f"H{i}"] = holder_terms
    return WeightedNormReport(k=k, alpha=alpha, weight=weight, scales=scales, components=components)


def weight_monotonicity_factor(T: float, delta: float) -> float:
    """Bound on the ratio of norms at weights gamma + delta and gamma."""
    return float(T) ** float(delta)


def hadamard_product(first: NDArray, second: NDArray) -> NDArray:
    """Componentwise product of two trajectories, the bilinear pairing of the product estimate."""
    return np.multiply(first, second)


def random_smooth_path(grid: Grid, times: NDArray, rng: np.random.Generator, modes: int = 3) -> NDArray:
    """Scalar trajectory a(t) * f(x) + b(t) with low Fourier modes on periodic grids."""
    coords = grid.coordinates()
    field = np.zeros(grid.shape)
    for _ in range(modes):
        phase = rng.uniform(0, 2 * np.pi)
        wave = np.zeros(grid.shape)
        for axis, spec in enumerate(grid.spec.axes):
            wave = wave + rng.integers(1, 3) * 2 * np.pi * coords[axis] / spec.extent
        field = field + rng.normal() * np.cos(wave + phase)
    exponent = rng.uniform(0.0, 1.0)
    offset = rng.normal()
    return np.stack([(t ** exponent) * field + offset * np.sqrt(t) for t in times])


def calibrate_product_constant(grid: Grid, times: NDArray, alpha: float = 0.5,
                               weights: Tuple[float, float] = (0.25, 0.25), k: int = 1,
                               samples: int = 4, seed: int = 0) -> float:
    """Largest observed ratio of the product estimate over random smooth pairs."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        eta = random_smooth_path(grid, times, rng)
        zeta = random_smooth_path(grid, times, rng)
        product = weighted_norm(times, hadamard_product(eta, zeta), grid, k, alpha, sum(weights)).total
        bound = (weighted_norm(times, eta, grid, k, alpha, weights[0]).total
                 * weighted_norm(times, zeta, grid, k, alpha, weights[1]).total)
        if bound > 0:
            worst = max(worst, product / bound)
    get_logger().debug(f"product constant calibration: worst ratio {worst:.3f} over {samples} samples")
    return worst


def mollify(g: MetricField, eps: float) -> MetricField:
    """
    Gaussian smoothing of every component at scale ``eps``.

    Reflecting axes are padded with parity ghosts first so the kernel
    commutes with the reflection. Raises PositivityError if the result is
    not positive definite.
    """
    grid = g.grid
    if eps < min(grid.spacings) * (1.0 - 1e-12):
        raise ValueError(f"smoothing scale {eps} is below the mesh spacing")
    sigmas = [eps / h for h in grid.spacings]
    data = g.data
    axis0 = grid.axis(0)
    width = 0
    if not axis0.periodic:
        width = int(math.ceil(4.0 * sigmas[0])) + 1
        if width > axis0.resolution - 1:
            raise ConfigurationError(f"smoothing scale {eps} needs {width} ghost layers, "
                                     f"more than the axis provides")
        data = grid.pad(data, 0, width, g.parity)
    modes = ["wrap" if spec.periodic else "constant" for spec in grid.spec.axes] + ["constant"] * g.rank
    smoothed = ndimage.gaussian_filter(data, sigma=sigmas + [0.0] * g.rank, mode=modes, truncate=4.0)
    if width:
        smoothed = smoothed[width:width + axis0.resolution]
    result = g.with_data(smoothed)
    result.cholesky()
    return result
