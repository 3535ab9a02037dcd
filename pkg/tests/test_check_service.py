"""
Unit tests for the check service.
Tests margins, parabolicity and boundary classification of metric files.
"""

import tempfile
import unittest
from pathlib import Path

import numpy as np

from controllers import check_file
from controllers.settings_manager import build_initial_metric
from flows.rotsym import cap_corner_warp, round_warp, sphere_grid
from geometry.metric_io import vector_document, warped_document, write_document, write_metric
from geometry.tensorfield import MetricField, TensorField
from models.data_models import ScenarioConfig
from utils.exceptions import MetricFileError, PositivityError


class TestCheckMetricFiles(unittest.TestCase):
    """Test cases for checking metric documents."""

    def setUp(self):
        """Set up test fixtures."""
        self.temp_dir = tempfile.TemporaryDirectory()
        self.root = Path(self.temp_dir.name)
        self.flat = build_initial_metric(ScenarioConfig(resolution=16))

    def tearDown(self):
        """Clean up test fixtures."""
        self.temp_dir.cleanup()

    def test_flat_doubled_torus(self):
        """Test the flat torus: lambda 1, zero curvature and a totally geodesic mirror."""
        path = str(self.root / "flat.txt")
        write_metric(path, self.flat, doubled=True)
        report = check_file(path)
        self.assertEqual(report.kind, "metric")
        self.assertEqual(report.shape, (16, 16))
        self.assertAlmostEqual(report.lam, 1.0)
        self.assertAlmostEqual(report.margins.min_curvature_operator, 0.0, places=10)
        self.assertEqual(report.symmetry_residual, 0.0)
        self.assertEqual([form["where"] for form in report.boundary], ["mirror 0", "mirror L"])
        self.assertTrue(all(form["convex"] for form in report.boundary))
        self.assertIn("lambda_parabolicity: 1", report.lines())

    def test_report_dict(self):
        """Test the JSON form of a report."""
        path = str(self.root / "flat.txt")
        write_metric(path, self.flat)
        data = check_file(path).to_dict()
        self.assertEqual(data["shape"], [16, 16])
        self.assertIn("min_curvature_operator", data["margins"])
        self.assertEqual(data["boundary"], [])

    def test_scaled_metric_lambda(self):
        """Test that a constant multiple of the background has lambda equal to the factor."""
        path = str(self.root / "scaled.txt")
        write_metric(path, self.flat.with_data(2.0 * self.flat.data))
        self.assertAlmostEqual(check_file(path).lam, 2.0)

    def test_not_positive_definite(self):
        """Test that a non-SPD node raises PositivityError naming the node."""
        data = self.flat.data.copy()
        data[3, 5, 0, 0] = -1.0
        path = str(self.root / "bad.txt")
        write_metric(path, MetricField(self.flat.grid, data))
        with self.assertRaises(PositivityError) as ctx:
            check_file(path)
        self.assertEqual(ctx.exception.node, (3, 5))

    def test_vector_file_rejected(self):
        """Test that vector files cannot be checked."""
        path = str(self.root / "u.txt")
        u = TensorField(self.flat.grid, np.zeros(self.flat.grid.shape + (2,)), rank=1)
        write_document(path, vector_document(u))
        with self.assertRaises(MetricFileError):
            check_file(path)


class TestCheckWarpedFiles(unittest.TestCase):
    """Test cases for checking warped documents."""

    def setUp(self):
        """Set up test fixtures."""
        self.temp_dir = tempfile.TemporaryDirectory()
        self.root = Path(self.temp_dir.name)

    def tearDown(self):
        """Clean up test fixtures."""
        self.temp_dir.cleanup()

    def test_round_sphere(self):
        """Test that a full sphere has no boundary entries."""
        wm = round_warp(sphere_grid(65), 3)
        path = str(self.root / "round.txt")
        write_document(path, warped_document(wm.grid, wm.psi, wm.phi, 3, time=0.0))
        report = check_file(path)
        self.assertEqual((report.kind, report.n), ("warped", 3))
        self.assertEqual(report.boundary, [])
        self.assertTrue(np.isfinite(report.margins.min_scalar))

    def test_cap_corner_equator_is_convex(self):
        """Test the equator classification of a cap with a convex corner."""
        wm = cap_corner_warp(sphere_grid(65, hemisphere=True), 3, slope=0.5)
        path = str(self.root / "cap.txt")
        write_document(path, warped_document(wm.grid, wm.psi, wm.phi, 3, time=0.0, hemisphere=True))
        report = check_file(path)
        self.assertEqual(len(report.boundary), 1)
        equator = report.boundary[0]
        self.assertEqual(equator["where"], "equator")
        self.assertTrue(equator["convex"])
        self.assertTrue(equator["mean_convex"])
        self.assertGreater(equator["A_norm"], 0.1)

    def test_missing_dimension(self):
        """Test that a warped file without n is rejected."""
        wm = round_warp(sphere_grid(17), 3)
        document = warped_document(wm.grid, wm.psi, wm.phi, 3)
        document.extra.pop("n")
        path = str(self.root / "bad.txt")
        write_document(path, document)
        with self.assertRaises(MetricFileError):
            check_file(path)


if __name__ == "__main__":
    unittest.main()
