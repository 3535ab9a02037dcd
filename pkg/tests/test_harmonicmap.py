"""
Unit tests for the harmonic map heat flow.
Tests the map Laplacian, the implicit map flow, pullbacks to the DeTurck
gauge and the uniqueness cross-check.
"""

import math
import os
import unittest

import numpy as np

from flows.deturck import deturck_vectorfield
from flows.gauge import DiffeoField
from flows.harmonicmap import (
    displacement_variance,
    hmhf_flow,
    hmhf_rhs,
    pullback_to_deturck,
    uniqueness_gap,
)
from geometry.grid import Grid
from geometry.tensorfield import BackgroundMetric, MetricField
from models.data_models import AxisSpec, AxisTopology, BackgroundMode, GridSpec, TimeMesh
from utils.exceptions import UnsupportedModeError


def torus(resolution):
    axis = AxisSpec(AxisTopology.PERIODIC, 2 * math.pi, resolution)
    return Grid(GridSpec((axis, axis)))


def unit_metric(grid, time=None):
    return MetricField(grid, np.broadcast_to(np.eye(2), grid.shape + (2, 2)), time=time)


def wavy_metric(grid, amplitude=0.05):
    x, y = grid.coordinates()
    data = np.zeros(grid.shape + (2, 2))
    data[..., 0, 0] = 1.0 + amplitude * np.sin(x) * np.cos(y)
    data[..., 1, 1] = 1.0 + amplitude * np.cos(x)
    data[..., 0, 1] = data[..., 1, 0] = 0.5 * amplitude * np.sin(x + y)
    return MetricField(grid, data, time=0.0)


class TestMapLaplacian(unittest.TestCase):
    """Test cases for hmhf_rhs."""

    def setUp(self):
        """Set up test fixtures."""
        self.grid = torus(16)

    def test_identity_is_harmonic_for_background(self):
        """Test that the identity is harmonic from the background metric."""
        rhs = hmhf_rhs(DiffeoField.identity(self.grid), unit_metric(self.grid))
        np.testing.assert_array_equal(rhs, 0.0)

    def test_identity_tension_is_deturck_field(self):
        """Test that the tension of the identity is -W."""
        g = wavy_metric(self.grid)
        rhs = hmhf_rhs(DiffeoField.identity(self.grid), g)
        np.testing.assert_allclose(rhs, -deturck_vectorfield(g).data, atol=1e-14)

    def test_translation_is_harmonic(self):
        """Test that translations are harmonic for the background metric."""
        u = np.broadcast_to([0.2, -0.3], self.grid.shape + (2,))
        rhs = hmhf_rhs(DiffeoField(self.grid, u), unit_metric(self.grid))
        np.testing.assert_allclose(rhs, 0.0, atol=1e-14)

    def test_round_background_unsupported(self):
        """Test that only the flat background is supported."""
        axes = (AxisSpec(AxisTopology.POLAR, math.pi, 17), AxisSpec(AxisTopology.PERIODIC, 2 * math.pi, 8))
        grid = Grid(GridSpec(axes))
        g = BackgroundMetric(grid, BackgroundMode.ROUND_SPHERE).metric_field()
        with self.assertRaises(UnsupportedModeError):
            hmhf_rhs(DiffeoField.identity(grid), g)


class TestMapFlow(unittest.TestCase):
    """Test cases for hmhf_flow."""

    def setUp(self):
        """Set up test fixtures."""
        self.grid = torus(16)

    def test_identity_is_stationary(self):
        """Test that the identity stays put under the background metric."""
        mesh = TimeMesh(0.1, 4)
        maps = hmhf_flow(DiffeoField.identity(self.grid), [unit_metric(self.grid)] * 5, mesh)
        self.assertEqual(len(maps), 5)
        self.assertEqual(maps[-1].time, 0.1)
        np.testing.assert_allclose(maps[-1].u, 0.0, atol=1e-12)

    def test_displacement_relaxes(self):
        """Test that a wavy displacement relaxes to a translation."""
        x = self.grid.coordinates()[0]
        u = np.zeros(self.grid.shape + (2,))
        u[..., 0] = 0.1 * np.sin(x)
        phi = DiffeoField(self.grid, u)
        mesh = TimeMesh.uniform(5.0, 50)
        maps = hmhf_flow(phi, [unit_metric(self.grid)] * 51, mesh)
        self.assertLess(displacement_variance(maps[-1]), 1e-3 * displacement_variance(phi))

    def test_path_length_checked(self):
        """Test that one metric per level is required."""
        with self.assertRaises(ValueError):
            hmhf_flow(DiffeoField.identity(self.grid), [unit_metric(self.grid)], TimeMesh(0.1, 4))


class TestPullbackToDeturck(unittest.TestCase):
    """Test cases for pullbacks and the uniqueness gap."""

    def test_identity_maps(self):
        """Test that identity maps return the metrics unchanged."""
        grid = torus(16)
        g = wavy_metric(grid)
        g_path = [g.with_data(g.data, time=t) for t in (0.0, 0.05, 0.1)]
        phi_path = [DiffeoField.identity(grid, t) for t in (0.0, 0.05, 0.1)]
        pulled = pullback_to_deturck(phi_path, g_path)
        for metric, original in zip(pulled.metrics, g_path):
            np.testing.assert_allclose(metric.data, original.data, atol=1e-12)
            self.assertEqual(metric.time, original.time)
        self.assertTrue(np.isnan(pulled.defects[0]))
        self.assertTrue(np.isfinite(pulled.defects[1]))
        with self.assertRaises(ValueError):
            pullback_to_deturck(phi_path[:2], g_path)

    def test_uniqueness_gap_is_small(self):
        """Test that both routes agree on a small perturbation of the flat torus."""
        grid = torus(16)
        mesh = TimeMesh(0.02, 4)
        report = uniqueness_gap(wavy_metric(grid, 0.02), mesh)
        self.assertEqual(len(report.gaps), mesh.steps)
        self.assertTrue(np.all(np.isfinite(report.gaps)))
        self.assertLess(report.gap, 1e-2)
        self.assertEqual(list(report.frame().columns), ["t", "gap", "defect"])

    @unittest.skipUnless(os.environ.get("RICCILAB_SLOW"), "acceptance-scale run")
    def test_uniqueness_gap_converges(self):
        """Test that the route gap drops about 4x per doubling and stays below 1e-2 at 128^2."""
        gaps = []
        for resolution in (32, 64, 128):
            mesh = TimeMesh.uniform(0.02, 8 * (resolution // 32) ** 2)
            gaps.append(uniqueness_gap(wavy_metric(torus(resolution)), mesh).gap)
        ratio = gaps[1] / gaps[2]
        self.assertGreaterEqual(ratio, 3.0, msg=str(gaps))
        self.assertLessEqual(ratio, 5.0, msg=str(gaps))
        self.assertLess(gaps[1], gaps[0])
        self.assertLess(gaps[2], 1e-2)


if __name__ == "__main__":
    unittest.main()
