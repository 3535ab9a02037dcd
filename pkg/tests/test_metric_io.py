"""
Unit tests for the metric file format.
Tests text and binary documents and the errors raised for malformed files.
"""

import json
import math
import tempfile
import unittest
from pathlib import Path

import numpy as np

from geometry.grid import Grid
from geometry.metric_io import (
    BINARY_MAGIC,
    TEXT_MAGIC,
    document_to_metric,
    document_to_vector,
    read_document,
    read_metric,
    vector_document,
    warped_document,
    write_document,
    write_metric,
)
from geometry.tensorfield import MetricField, TensorField
from models.data_models import AxisSpec, AxisTopology, GridSpec
from utils.exceptions import MetricFileError


def torus_metric(seed=0):
    axes = (AxisSpec(AxisTopology.PERIODIC, 2 * math.pi, 8), AxisSpec(AxisTopology.PERIODIC, 2 * math.pi, 10))
    grid = Grid(GridSpec(axes))
    rng = np.random.default_rng(seed)
    data = np.broadcast_to(np.eye(2), grid.shape + (2, 2)).copy()
    noise = 0.1 * rng.normal(size=grid.shape)
    data[..., 0, 1] = data[..., 1, 0] = noise
    data[..., 1, 1] += rng.uniform(0.0, 1.0, size=grid.shape) / 3.0
    return MetricField(grid, data, time=0.125)


class TestMetricFiles(unittest.TestCase):
    """Test cases for writing and reading metric documents."""

    def setUp(self):
        """Set up test fixtures."""
        self.temp_dir = tempfile.TemporaryDirectory()
        self.root = Path(self.temp_dir.name)
        self.g = torus_metric()

    def tearDown(self):
        """Clean up after tests."""
        self.temp_dir.cleanup()

    def test_text_file_is_exact(self):
        """Test that text files reproduce every float64 exactly."""
        path = str(self.root / "g.txt")
        write_metric(path, self.g, doubled=True)
        loaded = read_metric(path)
        np.testing.assert_array_equal(loaded.data, self.g.data)
        self.assertEqual(loaded.time, 0.125)
        self.assertEqual(loaded.grid.spec, self.g.grid.spec)
        with open(path, encoding="utf-8") as f:
            self.assertEqual(f.readline().strip(), TEXT_MAGIC)
            header = json.loads(f.readline())
        self.assertEqual(header["fields"], ["g00", "g01", "g11"])
        self.assertTrue(header["flags"]["doubled"])

    def test_binary_file_is_exact(self):
        """Test that .bin files are binary and exact."""
        path = str(self.root / "g.bin")
        write_metric(path, self.g)
        with open(path, "rb") as f:
            self.assertEqual(f.readline().decode().strip(), BINARY_MAGIC)
        np.testing.assert_array_equal(read_metric(path).data, self.g.data)

    def test_vector_document(self):
        """Test displacement fields use u0..u(n-1)."""
        path = str(self.root / "u.txt")
        u = TensorField(self.g.grid, np.random.default_rng(1).normal(size=self.g.grid.shape + (2,)), time=0.5)
        write_document(path, vector_document(u))
        document = read_document(path)
        self.assertEqual(document.kind, "vector")
        np.testing.assert_array_equal(document_to_vector(document).data, u.data)
        with self.assertRaises(MetricFileError):
            document_to_metric(document)
        with self.assertRaises(MetricFileError):
            vector_document(TensorField(self.g.grid, self.g.data))

    def test_warped_document(self):
        """Test warped documents carry psi, phi and n."""
        axis = AxisSpec(AxisTopology.POLAR, math.pi, 17)
        grid = Grid(GridSpec((axis,)))
        x = grid.coordinates()[0]
        path = str(self.root / "w.txt")
        write_document(path, warped_document(grid, np.ones(17), np.sin(x), 3, time=0.0))
        document = read_document(path)
        self.assertEqual(document.kind, "warped")
        self.assertEqual(document.extra["n"], 3)
        self.assertTrue(document.flags["warped"])
        np.testing.assert_array_equal(document.fields["phi"], np.sin(x))

    def test_missing_file(self):
        """Test that a missing file raises MetricFileError."""
        with self.assertRaises(MetricFileError):
            read_document(str(self.root / "absent.txt"))

    def test_malformed_files(self):
        """Test each kind of malformed text file."""
        path = self.root / "g.txt"
        write_metric(str(path), self.g)
        lines = path.read_text(encoding="utf-8").splitlines()
        header = json.loads(lines[1])

        def broken(new_lines):
            target = self.root / "broken.txt"
            target.write_text("\n".join(new_lines) + "\n", encoding="utf-8")
            with self.assertRaises(MetricFileError):
                read_document(str(target))

        broken(lines[:1])
        broken(["# not a metric"] + lines[1:])
        broken(lines[:1] + ["{not json"] + lines[2:])
        broken(lines[:-2])
        broken(lines[:2] + ["g99"] + lines[3:])
        broken(lines[:3] + ["1.0 abc"] + lines[4:])
        broken(lines[:3] + [" ".join(lines[3].split()[:-1])] + lines[4:])
        for key in ("kind", "shape"):
            bad = dict(header)
            if key == "kind":
                bad["kind"] = "tensor"
            else:
                bad["shape"] = [3, 3]
            broken(lines[:1] + [json.dumps(bad)] + lines[2:])
        missing = {k: v for k, v in header.items() if k != "fields"}
        broken(lines[:1] + [json.dumps(missing)] + lines[2:])

    def test_truncated_binary(self):
        """Test that a short binary body is rejected."""
        path = self.root / "g.bin"
        write_metric(str(path), self.g)
        raw = path.read_bytes()
        path.write_bytes(raw[:-8])
        with self.assertRaises(MetricFileError):
            read_document(str(path))


if __name__ == "__main__":
    unittest.main()
