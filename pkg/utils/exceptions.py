"""
Custom exception hierarchy for RicciLab.
Provides specific exception types for configuration, numerical and I/O failures.
"""

from typing import Any, Dict, Optional


class RicciLabException(Exception):
    """
    Base exception for all RicciLab-specific exceptions.

    Every exception carries an optional ``details`` mapping (node, time,
    step, ...) that the structured logger prints as context.

    Usage:
        try:
            trajectory = flow(g0, mesh)
        except RicciLabException as e:
            log_exception_structured(e, {"scenario": name})
    """

    def __init__(self, message: str = "", details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.details: Dict[str, Any] = dict(details or {})


class ConfigurationError(RicciLabException):
    """
    Exception for invalid grid, axis, parity or scenario settings.

    When to use:
        - Parity undeclared on a reflecting or polar axis
        - A non-periodic axis other than axis 0
        - Scenario files with unknown domains, presets or incompatible dimensions

    Usage:
        if spec.topology is AxisTopology.POLAR and parity is None:
            raise ConfigurationError("polar axis requires a declared parity")

    Recovery strategy:
        - Fix the scenario file; the CLI exits with code 2
    """
    pass


class NumericalError(RicciLabException):
    """
    Base exception for runtime numerical failures.

    When to use:
        - As a base class; raise the specific subclass when the failure is known

    Recovery strategy:
        - Flows halt and return the partial trajectory; the CLI exits with code 1
    """
    pass


class PositivityError(NumericalError):
    """
    Exception raised when a metric stops being positive definite.

    When to use:
        - Cholesky factorization fails at some node
        - Mollification or pullback destroys positivity

    Usage:
        raise PositivityError("metric not SPD", node=(3, 7), time=0.01)

    Recovery strategy:
        - Reduce the time step or the perturbation amplitude
        - Inspect the reported node in the checkpoint file
    """

    def __init__(self, message: str, node: Optional[tuple] = None, time: Optional[float] = None,
                 min_eigenvalue: Optional[float] = None):
        super().__init__(message, {"node": node, "time": time, "min_eigenvalue": min_eigenvalue})
        self.node = node
        self.time = time
        self.min_eigenvalue = min_eigenvalue


class StiffnessError(NumericalError):
    """
    Exception raised when the implicit elliptic solve fails to converge.

    Carries the parabolicity constant of the coefficient metric so the
    caller can tell a badly conditioned coefficient from a solver issue.

    Recovery strategy:
        - Decrease dt or use a coarser grid
        - Check the certificate; very large lambda means near-degenerate w
    """

    def __init__(self, message: str, lam: Optional[float] = None, iterations: Optional[int] = None):
        super().__init__(message, {"lambda": lam, "iterations": iterations})
        self.lam = lam
        self.iterations = iterations


class GaugeDegenerationError(NumericalError):
    """
    Exception raised when a grid diffeomorphism loses orientation.

    When to use:
        - det of the Jacobian is non-positive at some node during the
          DeTurck ODE or the harmonic map heat flow

    Recovery strategy:
        - Stop the backward integration earlier (larger t_min)
        - Refine the time mesh
    """

    def __init__(self, message: str, time: Optional[float] = None, node: Optional[tuple] = None):
        super().__init__(message, {"time": time, "node": node})
        self.time = time
        self.node = node


class InversionError(NumericalError):
    """
    Exception raised when numerical inversion of a grid map fails to converge.

    Recovery strategy:
        - Use smaller displacements (shorter time span)
    """

    def __init__(self, message: str, max_residual: Optional[float] = None):
        super().__init__(message, {"max_residual": max_residual})
        self.max_residual = max_residual


class OracleValidationError(NumericalError):
    """
    Exception raised when a reduced formula disagrees with its independent oracle.

    When to use:
        - The warped-product right-hand side fails its validation gate

    Recovery strategy:
        - Treat as a programming error; do not run reduced flows
    """

    def __init__(self, message: str, error: Optional[float] = None):
        super().__init__(message, {"error": error})
        self.error = error


class AsymmetryError(NumericalError):
    """
    Exception raised when reflection-symmetric data is required but absent.

    When to use:
        - Boundary monitoring of a trajectory whose symmetry residual is too large
    """

    def __init__(self, message: str, residual: Optional[float] = None):
        super().__init__(message, {"residual": residual})
        self.residual = residual


class ReflectionError(NumericalError):
    """
    Exception raised when a half-domain metric cannot be reflected.

    When to use:
        - Mixed normal/tangential components do not vanish on a mirror slice
    """

    def __init__(self, message: str, max_mixed: Optional[float] = None):
        super().__init__(message, {"max_mixed": max_mixed})
        self.max_mixed = max_mixed


class CollapseError(NumericalError):
    """
    Exception raised when a warping function reaches zero away from the poles.

    Recovery strategy:
        - The reduced flow halts with a partial trajectory
    """

    def __init__(self, message: str, node: Optional[int] = None, time: Optional[float] = None):
        super().__init__(message, {"node": node, "time": time})
        self.node = node
        self.time = time


class UnsupportedModeError(RicciLabException):
    """
    Exception for operations that only exist for some background modes.

    Usage:
        if background.mode is not BackgroundMode.FLAT_TORUS:
            raise UnsupportedModeError("harmonic map heat flow needs a flat background")
    """
    pass


class UnsupportedDimensionError(RicciLabException):
    """
    Exception for operations that need a minimum dimension.

    Usage:
        if n < 4:
            raise UnsupportedDimensionError("PIC frame form needs n >= 4")
    """
    pass


class MetricFileError(RicciLabException):
    """
    Exception for malformed or unreadable metric files.

    Recovery strategy:
        - Regenerate the file; check header fields and array sizes
    """
    pass


class AcceptanceError(RicciLabException):
    """
    Exception raised when a study misses one of its acceptance thresholds.

    Recovery strategy:
        - Inspect the study summary; the CLI exits with code 3
    """
    pass


EXIT_CODES = {
    ConfigurationError: 2,
    AcceptanceError: 3,
}


def classify_exit_code(exc: BaseException) -> int:
    """
    Map an exception to a CLI exit code.

    Configuration problems exit 2, acceptance failures exit 3 and every
    other failure exits 1.
    """
    for exc_class, code in EXIT_CODES.items():
        if isinstance(exc, exc_class):
            return code
    return 1
