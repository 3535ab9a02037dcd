"""
Unit tests for tensor fields.
Tests metric factorizations, connections, background derivatives,
weighted Hoelder norms and mollification.
"""

import math
import unittest

import numpy as np

from flows.doubling import double_metric, symmetry_residual
from geometry.grid import Grid
from geometry.tensorfield import (
    PRODUCT_CONSTANT,
    BackgroundMetric,
    MetricField,
    TensorField,
    calibrate_product_constant,
    christoffel,
    component_parity,
    dyadic_scales,
    hat_gradient,
    hat_hessian,
    holder_seminorm,
    mollify,
    random_smooth_path,
    weight_monotonicity_factor,
    weighted_norm,
)
from models.data_models import AxisSpec, AxisTopology, BackgroundMode, GridSpec, TimeMesh
from utils.exceptions import ConfigurationError, PositivityError, UnsupportedDimensionError


def periodic_grid(*resolutions, extent=2 * math.pi):
    return Grid(GridSpec(tuple(AxisSpec(AxisTopology.PERIODIC, extent, n) for n in resolutions)))


def half_grid(nodes=9, periodic=16):
    axes = (AxisSpec(AxisTopology.REFLECT_ODD_CAPABLE, math.pi, nodes),
            AxisSpec(AxisTopology.PERIODIC, 2 * math.pi, periodic))
    return Grid(GridSpec(axes))


def polar_grid(resolution=129, angular=16):
    axes = (AxisSpec(AxisTopology.POLAR, math.pi, resolution),
            AxisSpec(AxisTopology.PERIODIC, 2 * math.pi, angular))
    return Grid(GridSpec(axes))


def random_metric(grid, seed=0, amp=0.1):
    """Smooth SPD metric on a periodic grid."""
    rng = np.random.default_rng(seed)
    n = grid.dim
    coords = grid.coordinates()
    data = np.broadcast_to(np.eye(n), grid.shape + (n, n)).copy()
    for i in range(n):
        for j in range(i, n):
            wave = np.cos(sum(coords) + rng.uniform(0, 2 * math.pi))
            data[..., i, j] += amp * rng.normal() * wave
            if i != j:
                data[..., j, i] = data[..., i, j]
    return MetricField(grid, data)


class TestTensorField(unittest.TestCase):
    """Test cases for TensorField storage."""

    def test_component_parity(self):
        """Test parity signs count the normal indices."""
        parity = component_parity(2, 3)
        self.assertEqual(parity[0, 0], 1.0)
        self.assertEqual(parity[0, 1], -1.0)
        self.assertEqual(parity[1, 2], 1.0)
        self.assertEqual(component_parity(1, 2).tolist(), [-1.0, 1.0])
        self.assertEqual(float(component_parity(0, 2)), 1.0)

    def test_shape_mismatch_raises(self):
        """Test that data must match the grid and rank."""
        grid = periodic_grid(8, 8)
        with self.assertRaises(ValueError):
            TensorField(grid, np.zeros((8, 8, 3)))

    def test_data_is_read_only(self):
        """Test that components cannot be changed in place."""
        field = TensorField(periodic_grid(8), np.zeros((8, 1)))
        with self.assertRaises(ValueError):
            field.data[0, 0] = 1.0
        with self.assertRaises(ValueError):
            field.data = np.zeros((4, 1))

    def test_write_invalidates_factorizations(self):
        """Test that writing components drops the cached inverse."""
        grid = periodic_grid(8, 8)
        g = MetricField(grid, np.broadcast_to(np.eye(2), (8, 8, 2, 2)))
        np.testing.assert_allclose(g.inverse()[0, 0], np.eye(2))
        g.write((0, 0), 4.0 * np.eye(2))
        np.testing.assert_allclose(g.inverse()[0, 0], 0.25 * np.eye(2))


class TestMetricField(unittest.TestCase):
    """Test cases for MetricField factorizations."""

    def setUp(self):
        """Set up test fixtures."""
        self.g = random_metric(periodic_grid(12, 10), seed=4)

    def test_inverse(self):
        """Test g times its inverse is the identity."""
        product = np.einsum("...ij,...jk->...ik", self.g.data, self.g.inverse())
        np.testing.assert_allclose(product, np.broadcast_to(np.eye(2), product.shape), atol=1e-12)

    def test_frames_are_orthonormal(self):
        """Test F^T g F = I for the Cholesky frames."""
        F = self.g.frames()
        gram = np.einsum("...ia,...ij,...jb->...ab", F, self.g.data, F)
        np.testing.assert_allclose(gram, np.broadcast_to(np.eye(2), gram.shape), atol=1e-10)

    def test_data_is_symmetrized(self):
        """Test that construction symmetrizes the components."""
        data = np.broadcast_to(np.array([[2.0, 0.4], [0.0, 1.0]]), (8, 8, 2, 2))
        g = MetricField(periodic_grid(8, 8), data)
        self.assertAlmostEqual(g.data[3, 3, 0, 1], 0.2)
        self.assertAlmostEqual(g.data[3, 3, 1, 0], 0.2)

    def test_positivity_error_names_node(self):
        """Test that a non-SPD node is reported."""
        data = np.broadcast_to(np.eye(2), (8, 8, 2, 2)).copy()
        data[2, 3] = -np.eye(2)
        g = MetricField(periodic_grid(8, 8), data)
        with self.assertRaises(PositivityError) as ctx:
            g.cholesky()
        self.assertEqual(ctx.exception.node, (2, 3))
        self.assertAlmostEqual(ctx.exception.min_eigenvalue, -1.0)

    def test_max_difference(self):
        """Test the sup-norm distance between two metrics."""
        other = self.g.with_data(self.g.data + 1e-3)
        self.assertAlmostEqual(self.g.max_difference(other), 1e-3)


class TestConnection(unittest.TestCase):
    """Test cases for Christoffel symbols and background derivatives."""

    def test_constant_metric_has_no_connection(self):
        """Test that constant metrics have vanishing Christoffel symbols."""
        grid = periodic_grid(8, 8, 8)
        g = MetricField(grid, np.broadcast_to(3.0 * np.eye(3), grid.shape + (3, 3)))
        np.testing.assert_allclose(christoffel(g).data, 0.0, atol=1e-14)

    def test_conformal_christoffel(self):
        """Test Gamma of e^(2f) delta against the closed form."""
        grid = periodic_grid(64, 64)
        x = grid.coordinates()[0]
        f = 0.1 * np.sin(x)
        g = MetricField(grid, np.exp(2 * f)[..., None, None] * np.eye(2))
        df = np.stack([0.1 * np.cos(x), np.zeros_like(x)], axis=-1)
        delta = np.eye(2)
        expected = (np.einsum("ki,...j->...kij", delta, df)
                    + np.einsum("kj,...i->...kij", delta, df)
                    - np.einsum("ij,...k->...kij", delta, df))
        self.assertLess(np.max(np.abs(christoffel(g).data - expected)), 1e-3)

    def test_hat_hessian_flat(self):
        """Test the flat Hessian of x^2 delta is 2 delta on interior nodes."""
        grid = half_grid(nodes=17)
        x = grid.coordinates()[0]
        eta = TensorField(grid, (x ** 2)[..., None, None] * np.eye(2))
        hessian = hat_hessian(eta).data
        np.testing.assert_allclose(hessian[1:-1, :, 0, 0], 2.0 * np.eye(2), rtol=1e-9, atol=1e-9)
        np.testing.assert_allclose(hessian[1:-1, :, 1, 1], 0.0, atol=1e-9)

    def test_hat_gradient_adds_slot(self):
        """Test the background gradient adds one slot in front."""
        grid = periodic_grid(16, 16)
        x, y = grid.coordinates()
        eta = TensorField(grid, np.stack([np.sin(x), np.cos(y)], axis=-1))
        grad = hat_gradient(eta)
        self.assertEqual(grad.rank, 2)
        self.assertLess(np.max(np.abs(grad.data[..., 0, 0] - np.cos(x))), 1e-1)

    def test_round_hessian_of_background_vanishes(self):
        """Test that the round Hessian of the round metric vanishes away from the poles."""
        grid = polar_grid()
        background = BackgroundMetric(grid, BackgroundMode.ROUND_SPHERE)
        g_hat = background.metric_field()
        hessian = hat_hessian(g_hat, background).data
        x = grid.coordinates()[0]
        away = np.sin(x) >= 0.25
        self.assertLess(np.nanmax(np.abs(hessian[away])), 2e-2)
        self.assertTrue(np.all(np.isnan(hessian[0])))

    def test_round_background_needs_polar_chart(self):
        """Test that the round background checks its chart."""
        with self.assertRaises(ConfigurationError):
            BackgroundMetric(periodic_grid(16, 16), BackgroundMode.ROUND_SPHERE)
        with self.assertRaises(UnsupportedDimensionError):
            BackgroundMetric(periodic_grid(8, 8, 8), BackgroundMode.ROUND_SPHERE)


class TestHolderNorms(unittest.TestCase):
    """Test cases for Hoelder seminorms and weighted norms."""

    def test_constant_has_zero_seminorm(self):
        """Test that a constant trajectory has zero seminorm."""
        grid = periodic_grid(16)
        values = np.full((5, 16), 2.0)
        self.assertEqual(holder_seminorm(np.linspace(0, 1, 5), values, grid, 0.5), 0.0)

    def test_absolute_value_half_holder(self):
        """Test the 1/2-Hoelder seminorm of |x| on [-1, 1]."""
        axis = AxisSpec(AxisTopology.REFLECT_EVEN, 2.0, 41, origin=-1.0)
        grid = Grid(GridSpec((axis,)))
        x = grid.coordinates()[0]
        value = holder_seminorm([0.0], np.abs(x)[None], grid, 0.5)
        self.assertAlmostEqual(value, 1.0, places=10)

    def test_square_root_in_time(self):
        """Test the time Hoelder quotient of sqrt(t) with alpha = 1/2."""
        grid = periodic_grid(16)
        times = np.linspace(0.0, 1.0, 17)
        values = np.sqrt(times)[:, None] * np.ones(16)
        self.assertAlmostEqual(holder_seminorm(times, values, grid, 0.5), 1.0, places=10)

    def test_window_validation(self):
        """Test that windows shorter than one step are rejected."""
        grid = periodic_grid(16)
        times = np.linspace(0.0, 1.0, 5)
        values = np.zeros((5, 16))
        with self.assertRaises(ValueError):
            holder_seminorm(times, values, grid, 0.5, window=(0.5, 0.5 + 1e-6))
        with self.assertRaises(ValueError):
            holder_seminorm(times, values, grid, 1.5)

    def test_dyadic_scales(self):
        """Test sigma_j = T 2^-j down to eight smallest steps."""
        scales = dyadic_scales(np.linspace(0.0, 1.0, 65))
        np.testing.assert_allclose(scales, [1.0, 0.5, 0.25, 0.125])

    def test_zero_trajectory_has_zero_norm(self):
        """Test that the weighted norm of zero is zero."""
        grid = periodic_grid(16)
        times = TimeMesh(1.0, 16).times
        report = weighted_norm(times, np.zeros((17, 16)), grid, 1, 0.5, 0.25)
        self.assertEqual(report.total, 0.0)
        self.assertEqual(set(report.components), {"C0", "H0", "C1", "H1"})

    def test_square_root_sup_term(self):
        """Test the sup term of sqrt(t) at weight 1/4 peaks at 1."""
        grid = periodic_grid(16)
        times = TimeMesh.uniform(1.0, 64).times
        values = np.sqrt(times)[:, None] * np.ones(16)
        report = weighted_norm(times, values, grid, 0, 0.5, 0.25)
        self.assertAlmostEqual(report.suprema["C0"], 1.0, places=10)
        self.assertAlmostEqual(report.total, sum(report.suprema.values()))
        self.assertAlmostEqual(report.sup_total, 1.0, places=10)
        self.assertGreater(report.total, report.sup_total)

    def test_too_few_scales_raises(self):
        """Test that meshes resolving fewer than two scales are rejected."""
        grid = periodic_grid(16)
        with self.assertRaises(ValueError):
            weighted_norm([0.0, 0.5, 1.0], np.zeros((3, 16)), grid, 0, 0.5, 0.25)

    def test_weight_monotonicity(self):
        """Test that raising the weight by delta costs at most T^delta."""
        grid = periodic_grid(16)
        times = TimeMesh(0.25, 32).times
        values = random_smooth_path(grid, times, np.random.default_rng(5))
        low = weighted_norm(times, values, grid, 1, 0.5, 0.25)
        high = weighted_norm(times, values, grid, 1, 0.5, 0.75)
        self.assertLessEqual(high.total, weight_monotonicity_factor(0.25, 0.5) * low.total + 1e-12)

    def test_higher_order_dominates(self):
        """Test that the order-k norm bounds the order-(k-1) norm."""
        grid = periodic_grid(16)
        times = TimeMesh(0.25, 32).times
        values = random_smooth_path(grid, times, np.random.default_rng(6))
        self.assertGreaterEqual(weighted_norm(times, values, grid, 1, 0.5, 0.25).total,
                                weighted_norm(times, values, grid, 0, 0.5, 0.25).total)

    def test_product_estimate_constant(self):
        """Test the frozen product constant bounds observed ratios."""
        grid = periodic_grid(16)
        times = TimeMesh(1.0, 32).times
        worst = calibrate_product_constant(grid, times, samples=2, seed=0)
        self.assertGreater(worst, 0.0)
        self.assertLessEqual(worst, PRODUCT_CONSTANT)


class TestMollify(unittest.TestCase):
    """Test cases for metric mollification."""

    def setUp(self):
        """Set up test fixtures."""
        grid = half_grid()
        x = grid.coordinates()[0]
        data = np.broadcast_to(np.eye(2), grid.shape + (2, 2)).copy()
        data[..., 1, 1] = 1.0 + 0.5 * x
        self.half = MetricField(grid, data)
        self.doubled = double_metric(self.half)

    def test_constant_is_unchanged(self):
        """Test that constants are fixed by the smoothing."""
        grid = periodic_grid(16, 16)
        g = MetricField(grid, np.broadcast_to(2.0 * np.eye(2), grid.shape + (2, 2)))
        h = min(grid.spacings)
        np.testing.assert_allclose(mollify(g, 2 * h).data, g.data, atol=1e-12)

    def test_symmetry_is_preserved(self):
        """Test that mollifying a doubled metric keeps it reflection invariant."""
        h = min(self.doubled.grid.spacings)
        self.assertLess(symmetry_residual(mollify(self.doubled, 2 * h)), 1e-12)

    def test_kink_converges(self):
        """Test that the mollified kink approaches the kink as eps shrinks."""
        h = min(self.doubled.grid.spacings)
        errors = [self.doubled.max_difference(mollify(self.doubled, k * h)) for k in (4, 2)]
        self.assertLess(errors[1], errors[0])

    def test_scale_below_mesh_raises(self):
        """Test that eps must be at least one spacing."""
        with self.assertRaises(ValueError):
            mollify(self.doubled, 0.1 * min(self.doubled.grid.spacings))

    def test_half_grid_ghost_limit(self):
        """Test that smoothing wider than the half axis is refused."""
        with self.assertRaises(ConfigurationError):
            mollify(self.half, 3 * self.half.grid.spacings[0])


if __name__ == "__main__":
    unittest.main()
