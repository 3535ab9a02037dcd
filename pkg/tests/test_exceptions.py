"""
Unit tests for the exception hierarchy, decorators and structured logging.
Tests exit codes, exception details and error categorization.
"""

import unittest
from unittest.mock import patch

from utils.decorators import log_execution_time, with_error_context
from utils.exceptions import (
    AcceptanceError,
    AsymmetryError,
    CollapseError,
    ConfigurationError,
    GaugeDegenerationError,
    InversionError,
    MetricFileError,
    NumericalError,
    OracleValidationError,
    PositivityError,
    RicciLabException,
    StiffnessError,
    UnsupportedDimensionError,
    UnsupportedModeError,
    classify_exit_code,
)
from utils.logger import get_logger


class TestExitCodes(unittest.TestCase):
    """Test cases for classify_exit_code."""

    def test_configuration_exits_two(self):
        """Test that configuration problems exit with code 2."""
        self.assertEqual(classify_exit_code(ConfigurationError("bad axis")), 2)

    def test_acceptance_exits_three(self):
        """Test that acceptance failures exit with code 3."""
        self.assertEqual(classify_exit_code(AcceptanceError("order below 1.5")), 3)

    def test_everything_else_exits_one(self):
        """Test that runtime failures exit with code 1."""
        for exc in (PositivityError("not SPD"), MetricFileError("truncated"),
                    RuntimeError("boom"), KeyboardInterrupt()):
            self.assertEqual(classify_exit_code(exc), 1)


class TestExceptionDetails(unittest.TestCase):
    """Test cases for exception attributes and details."""

    def test_hierarchy(self):
        """Test that numerical failures share a base class."""
        for cls in (PositivityError, StiffnessError, GaugeDegenerationError, InversionError,
                    CollapseError, AsymmetryError):
            self.assertTrue(issubclass(cls, NumericalError))
        self.assertTrue(issubclass(NumericalError, RicciLabException))
        self.assertFalse(issubclass(ConfigurationError, NumericalError))

    def test_positivity_details(self):
        """Test node, time and eigenvalue on PositivityError."""
        e = PositivityError("metric not SPD", node=(3, 7), time=0.01, min_eigenvalue=-1e-3)
        self.assertEqual(e.node, (3, 7))
        self.assertEqual(e.details, {"node": (3, 7), "time": 0.01, "min_eigenvalue": -1e-3})

    def test_stiffness_details(self):
        """Test that StiffnessError carries the parabolicity constant."""
        e = StiffnessError("no convergence", lam=12.5, iterations=10_000)
        self.assertEqual(e.details["lambda"], 12.5)
        self.assertEqual(e.iterations, 10_000)

    def test_default_details(self):
        """Test that plain exceptions get an empty mapping."""
        self.assertEqual(ConfigurationError("x").details, {})


class TestDecorators(unittest.TestCase):
    """Test cases for utility decorators."""

    def test_error_context_fills_missing_keys(self):
        """Test that keyword arguments are attached to exception details."""

        @with_error_context(scenario="name", time="t")
        def failing(name=None, t=None):
            raise PositivityError("not SPD", time=0.5)

        with self.assertRaises(PositivityError) as ctx:
            failing(name="kink", t=0.9)
        self.assertEqual(ctx.exception.details["scenario"], "kink")
        self.assertEqual(ctx.exception.details["time"], 0.5)

    def test_error_context_ignores_other_exceptions(self):
        """Test that non-RicciLab exceptions pass through unchanged."""

        @with_error_context(scenario="name")
        def failing(name=None):
            raise KeyError("missing")

        with self.assertRaises(KeyError):
            failing(name="kink")

    def test_log_execution_time(self):
        """Test that timed functions return results and re-raise failures."""

        @log_execution_time
        def square(x):
            return x * x

        @log_execution_time
        def broken():
            raise ValueError("no")

        self.assertEqual(square(3), 9)
        self.assertEqual(square.__name__, "square")
        with patch.object(get_logger(), "error") as mock_error:
            with self.assertRaises(ValueError):
                broken()
        mock_error.assert_called_once()


class TestStructuredLogging(unittest.TestCase):
    """Test cases for categorization and structured exception logs."""

    def test_categories(self):
        """Test the category of each exception family."""
        logger = get_logger()
        cases = {
            "CONFIGURATION": ConfigurationError("x"),
            "POSITIVITY": PositivityError("x"),
            "STIFFNESS": StiffnessError("x"),
            "GAUGE": InversionError("x"),
            "MODE": UnsupportedModeError("x"),
            "DIMENSION": UnsupportedDimensionError("x"),
            "IO": MetricFileError("x"),
            "ORACLE": OracleValidationError("x"),
            "SYMMETRY": AsymmetryError("x"),
            "COLLAPSE": CollapseError("x"),
            "VALUE_ERROR": ValueError("x"),
            "UNKNOWN": RuntimeError("x"),
        }
        for category, exc in cases.items():
            self.assertEqual(logger._categorize_exception(exc), category)

    def test_structured_block_includes_details(self):
        """Test that details and context are printed in the block."""
        logger = get_logger()
        e = CollapseError("phi reached zero", node=12, time=0.2)
        with patch.object(logger.logger, "error") as mock_error:
            logger.log_exception_structured(e, {"scenario": "neckpinch"})
        block = mock_error.call_args[0][0]
        self.assertIn("EXCEPTION: CollapseError", block)
        self.assertIn("node: 12", block)
        self.assertIn("scenario: neckpinch", block)
        self.assertIn("Category: COLLAPSE", block)


if __name__ == "__main__":
    unittest.main()
