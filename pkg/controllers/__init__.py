"""Scenario configuration, runs, studies, checks and report emission."""

from .settings_manager import SettingsManager, load_scenario, scenario_from_dict, build_initial_metric
from .report_writer import ReportWriter, VERSION
from .run_service import RunService, RunResult, simulate
from .study_manager import StudyManager, StudyResult, convergence_orders
from .check_service import CheckReport, check_file

__all__ = [
    "SettingsManager",
    "load_scenario",
    "scenario_from_dict",
    "build_initial_metric",
    "ReportWriter",
    "VERSION",
    "RunService",
    "RunResult",
    "simulate",
    "StudyManager",
    "StudyResult",
    "convergence_orders",
    "CheckReport",
    "check_file",
]
