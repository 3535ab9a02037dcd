"""
Data models for RicciLab.
Defines grid, mesh, diagnostics and report structures shared by every module.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd


class AxisTopology(Enum):
    """Enumeration of axis topologies."""
    PERIODIC = "periodic"
    REFLECT_EVEN = "reflect_even"
    REFLECT_ODD_CAPABLE = "reflect_odd_capable"
    POLAR = "polar"


class Parity(Enum):
    """Reflection parity of a field about a mirror node."""
    EVEN = "even"
    ODD = "odd"

    @property
    def sign(self) -> float:
        return 1.0 if self is Parity.EVEN else -1.0

    def flipped(self) -> "Parity":
        return Parity.ODD if self is Parity.EVEN else Parity.EVEN


class BackgroundMode(Enum):
    """Background metric modes."""
    FLAT_TORUS = "flat_torus"
    ROUND_SPHERE = "round_sphere"


class ConeVariant(Enum):
    """Isotropic curvature cone variants, nested PIC2 inside PIC1 inside PIC."""
    PIC = "PIC"
    PIC1 = "PIC1"
    PIC2 = "PIC2"


class Domain(Enum):
    """Scenario domains."""
    TORUS_DOUBLED = "torus_doubled"
    ROTSYM_SPHERE = "rotsym_sphere"
    ROTSYM_HEMISPHERE_DOUBLED = "rotsym_hemisphere_doubled"


class StudyKind(Enum):
    """Experiment sweeps run by the study subcommand."""
    SMOOTHING = "smoothing"
    CONTRACTION = "contraction"
    PRESERVATION = "preservation"
    SPHERE_BENCH = "sphere_bench"
    UNIQUENESS = "uniqueness"
    CONVERGENCE = "convergence"


def _coerce_enum(value: Any, enum_cls: type, name: str):
    if isinstance(value, enum_cls):
        return value
    if isinstance(value, str):
        try:
            return enum_cls(value)
        except ValueError:
            raise ValueError(f"{name} must be one of {[e.value for e in enum_cls]}, got {value!r}")
    raise TypeError(f"{name} must be a {enum_cls.__name__}")


@dataclass(frozen=True)
class AxisSpec:
    """
    One grid axis.

    Periodic axes place N nodes at ``origin + i*L/N``. Every other topology
    places N nodes at ``origin + i*L/(N-1)`` with a mirror node at each end.
    ``parity``/``parity_right`` declare the reflection parity of scalar fields
    at the left/right mirror; polar axes put a pole at the left end and, if
    ``right_pole`` is set, at the right end.
    """
    topology: AxisTopology
    extent: float
    resolution: int
    origin: float = 0.0
    parity: Optional[Parity] = None
    parity_right: Optional[Parity] = None
    right_pole: bool = True

    def __post_init__(self):
        """Validate AxisSpec after initialization."""
        object.__setattr__(self, "topology", _coerce_enum(self.topology, AxisTopology, "topology"))
        if self.parity is not None:
            object.__setattr__(self, "parity", _coerce_enum(self.parity, Parity, "parity"))
        if self.parity_right is not None:
            object.__setattr__(self, "parity_right", _coerce_enum(self.parity_right, Parity, "parity_right"))
        if not isinstance(self.resolution, (int, np.integer)) or isinstance(self.resolution, bool):
            raise TypeError("resolution must be an integer")
        if self.resolution < 8:
            raise ValueError("An axis needs at least 8 nodes")
        if not self.extent > 0:
            raise ValueError("Axis extent must be positive")

    @property
    def periodic(self) -> bool:
        return self.topology is AxisTopology.PERIODIC

    @property
    def spacing(self) -> float:
        if self.periodic:
            return self.extent / self.resolution
        return self.extent / (self.resolution - 1)

    def coordinates(self) -> np.ndarray:
        return self.origin + self.spacing * np.arange(self.resolution)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "topology": self.topology.value,
            "extent": float(self.extent),
            "resolution": int(self.resolution),
            "origin": float(self.origin),
            "parity": self.parity.value if self.parity else None,
            "parity_right": self.parity_right.value if self.parity_right else None,
            "right_pole": bool(self.right_pole),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AxisSpec":
        return cls(
            topology=data["topology"],
            extent=float(data["extent"]),
            resolution=int(data["resolution"]),
            origin=float(data.get("origin", 0.0)),
            parity=data.get("parity"),
            parity_right=data.get("parity_right"),
            right_pole=bool(data.get("right_pole", True)),
        )


@dataclass(frozen=True)
class GridSpec:
    """Structured grid description: axes plus finite-difference order."""
    axes: Tuple[AxisSpec, ...]
    order: int = 2

    def __post_init__(self):
        """Validate GridSpec after initialization."""
        axes = tuple(self.axes)
        object.__setattr__(self, "axes", axes)
        if not axes:
            raise ValueError("GridSpec needs at least one axis")
        for axis in axes:
            if not isinstance(axis, AxisSpec):
                raise TypeError("axes must contain AxisSpec instances")
        for index, axis in enumerate(axes[1:], start=1):
            if not axis.periodic:
                raise ValueError(f"Only axis 0 may be non-periodic (axis {index} is {axis.topology.value})")
        if self.order not in (2, 4):
            raise ValueError("Finite-difference order must be 2 or 4")

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(axis.resolution for axis in self.axes)

    @property
    def spacings(self) -> Tuple[float, ...]:
        return tuple(axis.spacing for axis in self.axes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def to_dict(self) -> Dict[str, Any]:
        return {"axes": [axis.to_dict() for axis in self.axes], "order": self.order}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "GridSpec":
        return cls(axes=tuple(AxisSpec.from_dict(a) for a in data["axes"]), order=int(data.get("order", 2)))


@dataclass(frozen=True)
class NodeIndex:
    """Multi-index into a grid with row-major linearization."""
    indices: Tuple[int, ...]
    shape: Tuple[int, ...]

    def __post_init__(self):
        """Validate NodeIndex after initialization."""
        if len(self.indices) != len(self.shape):
            raise ValueError("index rank does not match grid rank")
        for i, n in zip(self.indices, self.shape):
            if not 0 <= i < n:
                raise ValueError(f"index {self.indices} out of range for shape {self.shape}")

    @property
    def linear(self) -> int:
        return int(np.ravel_multi_index(self.indices, self.shape))

    @classmethod
    def from_linear(cls, linear: int, shape: Tuple[int, ...]) -> "NodeIndex":
        return cls(tuple(int(i) for i in np.unravel_index(int(linear), shape)), tuple(shape))


@dataclass
class TimeMesh:
    """Graded time mesh t_k = T (k/N)^rho; rho = 1 is uniform."""
    T: float
    steps: int
    rho: float = 2.0

    def __post_init__(self):
        """Validate TimeMesh after initialization."""
        if not self.T > 0:
            raise ValueError("Final time T must be positive")
        if self.steps < 1:
            raise ValueError("A time mesh needs at least one step")
        if not self.rho >= 1.0:
            raise ValueError("Grading exponent rho must be >= 1")
        self.times = self.T * (np.arange(self.steps + 1) / self.steps) ** self.rho
        self.times[-1] = self.T

    @classmethod
    def uniform(cls, T: float, steps: int) -> "TimeMesh":
        return cls(T=T, steps=steps, rho=1.0)

    @classmethod
    def from_times(cls, times) -> "TimeMesh":
        """Mesh over explicit increasing levels, e.g. the tail of a graded mesh."""
        times = np.asarray(times, dtype=float)
        if times.size < 2 or np.any(np.diff(times) <= 0):
            raise ValueError("time levels must be strictly increasing")
        mesh = cls(T=float(times[-1]), steps=times.size - 1, rho=1.0)
        mesh.times = times.copy()
        return mesh

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.times)

    @property
    def dt_min(self) -> float:
        return float(self.dt.min())

    def dyadic_levels(self) -> int:
        """Number of resolvable dyadic scales T 2^-j, j = 0..floor(log2(T / (8 dt_min)))."""
        ratio = self.T / (8.0 * self.dt_min)
        if ratio < 1.0:
            return 0
        return int(math.floor(math.log2(ratio))) + 1


@dataclass
class ParabolicityCertificate:
    """Uniform parabolicity constant of a coefficient metric path."""
    lam: float
    node: Optional[Tuple[int, ...]] = None
    step: Optional[int] = None

    def __post_init__(self):
        """Validate ParabolicityCertificate after initialization."""
        if not np.isfinite(self.lam):
            raise ValueError("Parabolicity constant must be finite")
        if self.lam < 1.0 - 1e-12:
            raise ValueError("Parabolicity constant must be >= 1")


DIAGNOSTIC_COLUMNS = [
    "t", "min_scal", "min_curv_op_eig", "pic_margin", "pic1_margin", "pic2_margin",
    "boundary_A_norm", "H_min", "symmetry_residual", "lambda_parabolicity",
    "max_grad_g", "max_hess_g", "ricci_residual", "drift",
]


@dataclass
class DiagnosticsRecord:
    """Per-step monitors of a flow; unset monitors stay NaN."""
    t: float
    step: int = 0
    min_scal: float = float("nan")
    min_curv_op_eig: float = float("nan")
    pic_margin: float = float("nan")
    pic1_margin: float = float("nan")
    pic2_margin: float = float("nan")
    boundary_A_norm: float = float("nan")
    H_min: float = float("nan")
    symmetry_residual: float = float("nan")
    lambda_parabolicity: float = float("nan")
    max_grad_g: float = float("nan")
    max_hess_g: float = float("nan")
    ricci_residual: float = float("nan")
    drift: float = float("nan")

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


def diagnostics_frame(records: List[DiagnosticsRecord]) -> pd.DataFrame:
    """Tabulate diagnostics records in the CSV column order."""
    frame = pd.DataFrame([r.to_dict() for r in records])
    if frame.empty:
        return pd.DataFrame(columns=["step"] + DIAGNOSTIC_COLUMNS)
    return frame[["step"] + DIAGNOSTIC_COLUMNS]


@dataclass
class WeightedNormReport:
    """
    Discrete weighted parabolic Hoelder norm of a trajectory.

    ``scales`` holds sigma_j = T 2^-j; ``components`` maps names such as
    ``C0``, ``C1``, ``H0`` to per-scale values; ``suprema`` holds the max of
    each component over scales and ``total`` their sum, Hoelder terms
    ``H{i}`` included. ``sup_total`` sums only the ``C{i}`` suprema.
    """
    k: int
    alpha: float
    weight: float
    scales: np.ndarray
    components: Dict[str, np.ndarray]
    suprema: Dict[str, float] = field(default_factory=dict)
    total: float = 0.0

    def __post_init__(self):
        """Validate WeightedNormReport after initialization."""
        if self.k < 0:
            raise ValueError("k must be non-negative")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        for name, values in self.components.items():
            if np.any(np.asarray(values) < 0):
                raise ValueError(f"component {name} has negative entries")
        if not self.suprema:
            self.suprema = {name: float(np.max(values)) if len(values) else 0.0
                            for name, values in self.components.items()}
            self.total = float(sum(self.suprema.values()))

    @property
    def sup_total(self) -> float:
        return float(sum(value for name, value in self.suprema.items() if name.startswith("C")))

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.components)
        frame.insert(0, "sigma", self.scales)
        return frame


@dataclass
class BoundaryForm:
    """Second fundamental form on a mirror slice, per slice node."""
    A: np.ndarray
    induced: np.ndarray
    eigenvalues: np.ndarray
    H: np.ndarray
    slice_index: int
    side: int
    tolerance: float = -1e-8

    def __post_init__(self):
        """Validate BoundaryForm after initialization."""
        if self.side not in (1, -1):
            raise ValueError("side must be +1 (half at x >= x_s) or -1 (half at x <= x_s)")

    @property
    def norm(self) -> float:
        """Largest |eigenvalue| of A over the slice."""
        if self.eigenvalues.size == 0:
            return 0.0
        return float(np.max(np.abs(self.eigenvalues)))

    @property
    def is_convex(self) -> bool:
        return bool(np.all(self.eigenvalues >= self.tolerance))

    @property
    def is_two_convex(self) -> bool:
        ev = np.sort(self.eigenvalues, axis=-1)
        if ev.shape[-1] < 2:
            return self.is_convex
        return bool(np.all(ev[..., 0] + ev[..., 1] >= self.tolerance))

    @property
    def is_mean_convex(self) -> bool:
        return bool(np.all(self.H >= self.tolerance))

    def classification(self) -> Dict[str, bool]:
        return {
            "convex": self.is_convex,
            "two_convex": self.is_two_convex,
            "mean_convex": self.is_mean_convex,
        }


@dataclass
class ConeMargins:
    """Global curvature-condition margins of one metric."""
    min_scalar: float = float("nan")
    min_curvature_operator: float = float("nan")
    pic: float = float("nan")
    pic1: float = float("nan")
    pic2: float = float("nan")

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


@dataclass
class ScenarioConfig:
    """A run or study scenario, loaded from a JSON scenario file."""
    name: str = "scenario"
    domain: Domain = Domain.TORUS_DOUBLED
    n: int = 2
    resolution: int = 32
    extent: float = math.pi
    T: float = 0.01
    steps: int = 100
    grading: float = 2.0
    order: int = 2
    theta: float = 1.0
    initial: Dict[str, Any] = field(default_factory=lambda: {"preset": "flat"})
    background: BackgroundMode = BackgroundMode.FLAT_TORUS
    diagnostics: Dict[str, Any] = field(default_factory=dict)
    output_dir: str = "riccilab_out"
    seed: int = 0
    pic_sample: int = 64
    study: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        """Validate ScenarioConfig after initialization."""
        self.domain = _coerce_enum(self.domain, Domain, "domain")
        self.background = _coerce_enum(self.background, BackgroundMode, "background")
        if not self.name:
            raise ValueError("Scenario name cannot be empty")
        if self.n < 2:
            raise ValueError("Dimension n must be at least 2")
        if self.resolution < 8:
            raise ValueError("Resolution must be at least 8")
        if not self.extent > 0:
            raise ValueError("Extent must be positive")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if self.steps < 1:
            raise ValueError("steps must be positive")
        if self.order not in (2, 4):
            raise ValueError("order must be 2 or 4")
        if self.theta not in (0.5, 1.0):
            raise ValueError("theta must be 1.0 (backward Euler) or 0.5 (Crank-Nicolson)")
        if not isinstance(self.initial, dict) or "preset" not in self.initial:
            raise ValueError("initial must be a mapping with a 'preset' key")
        if self.pic_sample < 1:
            raise ValueError("pic_sample must be positive")
        torus = self.domain is Domain.TORUS_DOUBLED
        if torus and self.background is not BackgroundMode.FLAT_TORUS:
            raise ValueError("torus domains use the flat background")
        if not torus and self.background is not BackgroundMode.ROUND_SPHERE:
            raise ValueError("rotationally symmetric domains use the round background")
        if self.diagnostics.get("cones", False) and self.n < 4:
            raise ValueError("cone margins need n >= 4")
        if TimeMesh(self.T, self.steps, self.grading).dyadic_levels() < 2:
            raise ValueError("time mesh resolves fewer than 2 dyadic scales")

    def mesh(self) -> TimeMesh:
        return TimeMesh(self.T, self.steps, self.grading)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["domain"] = self.domain.value
        data["background"] = self.background.value
        return data
