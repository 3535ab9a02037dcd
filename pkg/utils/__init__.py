"""Utility functions and helpers."""

from .logger import (
    get_logger, set_debug_mode, set_quiet_mode, debug, info, warning, error, critical, exception,
    log_exception_structured,
)
from .thread_pool_manager import ThreadPoolManager
from .exceptions import (
    RicciLabException,
    ConfigurationError,
    NumericalError,
    PositivityError,
    StiffnessError,
    GaugeDegenerationError,
    InversionError,
    OracleValidationError,
    AsymmetryError,
    ReflectionError,
    CollapseError,
    UnsupportedModeError,
    UnsupportedDimensionError,
    MetricFileError,
    AcceptanceError,
    classify_exit_code,
)
from .decorators import log_execution_time, with_error_context

__all__ = [
    "get_logger",
    "set_debug_mode",
    "set_quiet_mode",
    "debug",
    "info",
    "warning",
    "error",
    "critical",
    "exception",
    "log_exception_structured",
    "ThreadPoolManager",
    "RicciLabException",
    "ConfigurationError",
    "NumericalError",
    "PositivityError",
    "StiffnessError",
    "GaugeDegenerationError",
    "InversionError",
    "OracleValidationError",
    "AsymmetryError",
    "ReflectionError",
    "CollapseError",
    "UnsupportedModeError",
    "UnsupportedDimensionError",
    "MetricFileError",
    "AcceptanceError",
    "classify_exit_code",
    "log_execution_time",
    "with_error_context",
]
