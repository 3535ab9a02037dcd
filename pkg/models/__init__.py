"""Data models for RicciLab."""

from .data_models import (
    AxisTopology,
    Parity,
    BackgroundMode,
    ConeVariant,
    Domain,
    StudyKind,
    AxisSpec,
    GridSpec,
    NodeIndex,
    TimeMesh,
    ParabolicityCertificate,
    DiagnosticsRecord,
    DIAGNOSTIC_COLUMNS,
    diagnostics_frame,
    WeightedNormReport,
    BoundaryForm,
    ConeMargins,
    ScenarioConfig,
)

__all__ = [
    "AxisTopology",
    "Parity",
    "BackgroundMode",
    "ConeVariant",
    "Domain",
    "StudyKind",
    "AxisSpec",
    "GridSpec",
    "NodeIndex",
    "TimeMesh",
    "ParabolicityCertificate",
    "DiagnosticsRecord",
    "DIAGNOSTIC_COLUMNS",
    "diagnostics_frame",
    "WeightedNormReport",
    "BoundaryForm",
    "ConeMargins",
    "ScenarioConfig",
]
