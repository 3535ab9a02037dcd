"""
Structured-grid substrate.

Finite differences with ghost cells (periodic wrap or parity reflection),
sparse derivative matrices for implicit solves, and interpolation at
arbitrary points. Field arrays carry the grid axes first and any component
axes last, so ``field.shape == (*grid.shape, *components)``.
"""

from __future__ import annotations

import itertools
import threading
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp
from numpy.typing import NDArray
from scipy import ndimage

from models.data_models import AxisSpec, AxisTopology, GridSpec, NodeIndex, Parity
from utils.exceptions import ConfigurationError

ParityLike = Union[None, Parity, float, int, NDArray, Tuple]

# stencil offsets and weights (first, second derivative) per order
_STENCILS = {
    2: {
        1: ((-1, -0.5), (1, 0.5)),
        2: ((-1, 1.0), (0, -2.0), (1, 1.0)),
    },
    4: {
        1: ((-2, 1.0 / 12), (-1, -8.0 / 12), (1, 8.0 / 12), (2, -1.0 / 12)),
        2: ((-2, -1.0 / 12), (-1, 16.0 / 12), (0, -30.0 / 12), (1, 16.0 / 12), (2, -1.0 / 12)),
    },
}


def _sign_of(value) -> Union[float, NDArray]:
    if isinstance(value, Parity):
        return value.sign
    if isinstance(value, str):
        return Parity(value).sign
    return np.asarray(value, dtype=float) if np.ndim(value) else float(value)


def _window(a: NDArray, axis: int, start: int, length: int) -> NDArray:
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, start + length)
    return a[tuple(index)]


class Grid:
    """
    Operators over a :class:`GridSpec`.

    Stateless apart from a cache of sparse derivative matrices, so one Grid
    can be shared between threads.
    """

    def __init__(self, spec: GridSpec):
        self.spec = spec
        self._matrix_cache: Dict[tuple, sp.csr_matrix] = {}
        self._cache_lock = threading.Lock()

    # ------------------------------------------------------------------ basics
    @property
    def dim(self) -> int:
        return self.spec.dim

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.spec.shape

    @property
    def spacings(self) -> Tuple[float, ...]:
        return self.spec.spacings

    @property
    def order(self) -> int:
        return self.spec.order

    def axis(self, index: int) -> AxisSpec:
        return self.spec.axes[index]

    @property
    def mirrored(self) -> bool:
        """True when axis 0 carries mirror nodes."""
        return not self.spec.axes[0].periodic

    def coordinates(self) -> Tuple[NDArray, ...]:
        return tuple(np.meshgrid(*[a.coordinates() for a in self.spec.axes], indexing="ij"))

    def points(self) -> NDArray:
        """Node coordinates stacked on a trailing axis, shape (*shape, dim)."""
        return np.stack(self.coordinates(), axis=-1)

    def node_index(self, linear: int) -> NodeIndex:
        return NodeIndex.from_linear(linear, self.shape)

    def pole_mask(self) -> NDArray:
        """Boolean grid mask of pole nodes on a polar axis 0."""
        mask = np.zeros(self.shape, dtype=bool)
        axis0 = self.spec.axes[0]
        if axis0.topology is AxisTopology.POLAR:
            mask[0, ...] = True
            if axis0.right_pole:
                mask[-1, ...] = True
        return mask

    # ------------------------------------------------------------------ parity
    def resolve_parity(self, axis: int, parity: ParityLike) -> Optional[Tuple[object, object]]:
        """
        Return ghost signs (left, right) for ``axis`` or None on periodic axes.

        ``parity`` may be a Parity, a sign, an array of signs broadcasting over
        the component axes, or a (left, right) pair of any of these.
        """
        spec = self.spec.axes[axis]
        if spec.periodic:
            return None
        if parity is None:
            if spec.parity is not None:
                left = spec.parity
                right = spec.parity_right if spec.parity_right is not None else spec.parity
                parity = (left, right)
            elif spec.topology is AxisTopology.REFLECT_EVEN:
                return 1.0, 1.0
            else:
                raise ConfigurationError(
                    f"Axis {axis} ({spec.topology.value}) needs a declared parity for this field"
                )
        if isinstance(parity, tuple):
            left, right = _sign_of(parity[0]), _sign_of(parity[1])
        else:
            left = right = _sign_of(parity)
        if spec.topology is AxisTopology.REFLECT_EVEN:
            if np.any(np.asarray(left) < 0) or np.any(np.asarray(right) < 0):
                raise ConfigurationError("reflect_even axes only carry even fields")
        return left, right

    def pad(self, field: NDArray, axis: int, width: int, parity: ParityLike = None) -> NDArray:
        """Pad ``field`` with ``width`` ghost layers along ``axis``."""
        field = np.asarray(field, dtype=float)
        pad_width = [(0, 0)] * field.ndim
        pad_width[axis] = (width, width)
        signs = self.resolve_parity(axis, parity)
        if signs is None:
            return np.pad(field, pad_width, mode="wrap")
        n = field.shape[axis]
        if width > n - 1:
            raise ConfigurationError(f"ghost width {width} exceeds what {n} nodes can reflect")
        padded = np.pad(field, pad_width, mode="reflect")
        left, right = signs
        index = [slice(None)] * field.ndim
        index[axis] = slice(0, width)
        padded[tuple(index)] *= left
        index[axis] = slice(width + n, width + n + width)
        padded[tuple(index)] *= right
        return padded

    # --------------------------------------------------------------- differences
    def _apply_stencil(self, field: NDArray, axis: int, derivative: int, parity: ParityLike) -> NDArray:
        stencil = _STENCILS[self.order][derivative]
        width = max(abs(o) for o, _ in stencil)
        padded = self.pad(field, axis, width, parity)
        n = np.shape(field)[axis]
        out = np.zeros(np.shape(field), dtype=float)
        for offset, weight in stencil:
            out += weight * _window(padded, axis, width + offset, n)
        return out / self.spacings[axis] ** derivative

    def diff1(self, field: NDArray, axis: int, parity: ParityLike = None) -> NDArray:
        """Central first derivative along ``axis``."""
        return self._apply_stencil(field, axis, 1, parity)

    def diff2(self, field: NDArray, axis1: int, axis2: int, parity: ParityLike = None) -> NDArray:
        """
        Second derivative along (axis1, axis2).

        Mixed derivatives differentiate along the periodic axis first and
        along axis 0 last with the field's own parity, so the result is
        bitwise symmetric in the two axes.
        """
        if axis1 == axis2:
            return self._apply_stencil(field, axis1, 2, parity)
        first, last = sorted((axis1, axis2), reverse=True)
        inner = self.diff1(field, first, parity if self.spec.axes[first].periodic else None)
        return self.diff1(inner, last, parity)

    # ----------------------------------------------------------- sparse operators
    def _matrix_1d(self, axis: int, derivative: int, signs: Optional[Tuple[float, float]]) -> sp.csr_matrix:
        n = self.shape[axis]
        h = self.spacings[axis]
        rows, cols, vals = [], [], []
        for i in range(n):
            for offset, weight in _STENCILS[self.order][derivative]:
                j = i + offset
                sign = 1.0
                if signs is None:
                    j %= n
                else:
                    if j < 0:
                        j, sign = -j, signs[0]
                    elif j > n - 1:
                        j, sign = 2 * (n - 1) - j, signs[1]
                rows.append(i)
                cols.append(j)
                vals.append(sign * weight / h ** derivative)
        return sp.csr_matrix(sp.coo_matrix((vals, (rows, cols)), shape=(n, n)))

    def _embed(self, axis: int, matrix: sp.spmatrix) -> sp.csr_matrix:
        before = int(np.prod(self.shape[:axis])) if axis > 0 else 1
        after = int(np.prod(self.shape[axis + 1:])) if axis < self.dim - 1 else 1
        return sp.csr_matrix(sp.kron(sp.identity(before), sp.kron(matrix, sp.identity(after))))

    def derivative_matrix(self, axis1: int, axis2: Optional[int] = None,
                          parity: ParityLike = None) -> sp.csr_matrix:
        """
        Sparse matrix of d/dx_axis1 (or d2/dx_axis1 dx_axis2) on flattened
        scalar fields with a single scalar parity.
        """
        key = (axis1, axis2, self._parity_key(parity))
        with self._cache_lock:
            cached = self._matrix_cache.get(key)
        if cached is not None:
            return cached

        def signs_for(axis):
            resolved = self.resolve_parity(axis, parity)
            return None if resolved is None else (float(resolved[0]), float(resolved[1]))

        if axis2 is None:
            matrix = self._embed(axis1, self._matrix_1d(axis1, 1, signs_for(axis1)))
        elif axis1 == axis2:
            matrix = self._embed(axis1, self._matrix_1d(axis1, 2, signs_for(axis1)))
        else:
            a = self._embed(axis1, self._matrix_1d(axis1, 1, signs_for(axis1)))
            b = self._embed(axis2, self._matrix_1d(axis2, 1, signs_for(axis2)))
            matrix = sp.csr_matrix(a @ b)
        with self._cache_lock:
            self._matrix_cache[key] = matrix
        return matrix

    @staticmethod
    def _parity_key(parity: ParityLike):
        if parity is None:
            return None
        if isinstance(parity, tuple):
            return tuple(float(_sign_of(p)) for p in parity)
        return float(_sign_of(parity))

    # -------------------------------------------------------------- interpolation
    def fold(self, points: NDArray) -> Tuple[NDArray, NDArray]:
        """
        Map points into the fundamental domain.

        Returns fractional node coordinates (same shape as ``points``) and
        the per-axis reflection counts used to derive parity signs.
        """
        points = np.asarray(points, dtype=float)
        frac = np.empty_like(points)
        flips = np.zeros(points.shape, dtype=np.int64)
        right_flips = np.zeros(points.shape, dtype=np.int64)
        for a, spec in enumerate(self.spec.axes):
            x = points[..., a] - spec.origin
            if spec.periodic:
                x = np.mod(x, spec.extent)
                frac[..., a] = x / spec.spacing
            else:
                period = 2.0 * spec.extent
                m = np.floor(x / period)
                r = x - period * m
                upper = r > spec.extent
                r = np.where(upper, period - r, r)
                frac[..., a] = r / spec.spacing
                flips[..., a] = m.astype(np.int64)
                right_flips[..., a] = upper.astype(np.int64)
        nearest = np.round(frac)
        frac = np.where(np.abs(frac - nearest) < 1e-10, nearest, frac)
        return frac, np.stack([flips, right_flips], axis=0)

    def interpolate(self, field: NDArray, points: NDArray, parity: ParityLike = None,
                    method: str = "cubic") -> NDArray:
        """
        Evaluate ``field`` at continuous coordinates.

        ``points`` has shape (..., dim); the result has shape
        (..., *components). The default method is a local tensor-product
        cubic Lagrange interpolant, exact at nodes and for cubics;
        ``method="spline"`` uses cubic B-splines from scipy.ndimage.
        """
        field = np.asarray(field, dtype=float)
        points = np.asarray(points, dtype=float)
        lead = points.shape[:-1]
        flat_points = points.reshape(-1, self.dim)
        components = field.shape[self.dim:]
        frac, folds = self.fold(flat_points)
        sign = self._fold_sign(folds, components, parity)

        if method == "cubic":
            values = self._lagrange(field, frac, parity)
        elif method == "spline":
            values = self._spline(field, frac, parity)
        else:
            raise ValueError(f"Unknown interpolation method: {method}")
        values = values * sign
        return values.reshape(lead + components)

    def _fold_sign(self, folds: NDArray, components: Tuple[int, ...], parity: ParityLike) -> NDArray:
        count = folds.shape[1]
        sign = np.ones((count,) + components)
        if not self.mirrored:
            return sign
        left, right = self.resolve_parity(0, parity)
        left = np.broadcast_to(np.asarray(left, dtype=float), components)
        right = np.broadcast_to(np.asarray(right, dtype=float), components)
        m = folds[0, :, 0]
        upper = folds[1, :, 0]
        expand = (slice(None),) + (None,) * len(components)
        sign = sign * np.power((left * right)[None, ...], m[expand])
        sign = np.where(upper[expand] > 0, sign * right[None, ...], sign)
        return sign

    def _lagrange(self, field: NDArray, frac: NDArray, parity: ParityLike) -> NDArray:
        width = 2
        padded = field
        for a in range(self.dim):
            padded = self.pad(padded, a, width, parity if a == 0 else None)
        base = np.floor(frac).astype(np.int64)
        for a, spec in enumerate(self.spec.axes):
            top = spec.resolution - 1 if spec.periodic else spec.resolution - 2
            base[:, a] = np.clip(base[:, a], 0, top)
        t = frac - base
        weights = np.stack([
            -t * (t - 1.0) * (t - 2.0) / 6.0,
            (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
            -(t + 1.0) * t * (t - 2.0) / 2.0,
            (t + 1.0) * t * (t - 1.0) / 6.0,
        ], axis=0)
        components = field.shape[self.dim:]
        expand = (slice(None),) + (None,) * len(components)
        result = np.zeros((frac.shape[0],) + components)
        for offsets in itertools.product(range(4), repeat=self.dim):
            w = np.ones(frac.shape[0])
            index = []
            for a, o in enumerate(offsets):
                w = w * weights[o, :, a]
                index.append(base[:, a] + (o - 1) + width)
            result += w[expand] * padded[tuple(index)]
        return result

    def _spline(self, field: NDArray, frac: NDArray, parity: ParityLike) -> NDArray:
        width = 8
        padded = field
        for a in range(self.dim):
            padded = self.pad(padded, a, min(width, self.shape[a] - 1), parity if a == 0 else None)
        offsets = np.array([min(width, n - 1) for n in self.shape], dtype=float)
        coords = (frac + offsets).T
        components = field.shape[self.dim:]
        flat = padded.reshape(padded.shape[:self.dim] + (-1,))
        out = np.empty((frac.shape[0], flat.shape[-1]))
        for c in range(flat.shape[-1]):
            out[:, c] = ndimage.map_coordinates(flat[..., c], coords, order=3, mode="mirror")
        return out.reshape((frac.shape[0],) + components)

    # ----------------------------------------------------------------- slices
    def mirror_slices(self) -> Tuple[int, ...]:
        """Axis-0 node indices of mirror slices."""
        spec = self.spec.axes[0]
        if spec.periodic:
            n = spec.resolution
            return (0, n // 2) if n % 2 == 0 else (0,)
        return (0, spec.resolution - 1)
