"""
RunService for RicciLab.
Runs one scenario end to end and writes its reports.
"""

import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
import pandas as pd

from controllers.report_writer import ReportWriter
from controllers.settings_manager import build_initial_metric
from flows.deturck import DiagnosticsOptions, FlowTrajectory, deturck_vectorfield, flow
from flows.gauge import integrate_deturck_ode, ricci_flow_from, ricci_residual
from flows.rotsym import WarpedTrajectory, reduced_flow
from models.data_models import Domain, ScenarioConfig
from utils.exceptions import NumericalError
from utils.logger import get_logger, log_exception_structured


@dataclass
class RunResult:
    """Outputs of one scenario run."""
    scenario: str
    frame: pd.DataFrame
    csv_path: Path
    checkpoints: List[Path] = field(default_factory=list)
    summary_path: Optional[Path] = None
    halted: bool = False
    halt_reason: Optional[str] = None

    @property
    def steps_completed(self) -> int:
        return int(self.frame["step"].max()) if not self.frame.empty else 0


def attach_ricci_residual(trajectory: FlowTrajectory, frame: pd.DataFrame) -> pd.DataFrame:
    """
    Fill the ricci_residual column from the DeTurck gauge stage.

    The flow is pulled back by the maps of d(psi)/dt = -W(psi) and the
    residual of d_t g = -2 Ric is taken at every interior level.
    """
    metrics = trajectory.metrics
    if len(metrics) < 4:
        return frame
    mesh = trajectory.mesh
    W_path = [deturck_vectorfield(g) for g in metrics]
    maps = integrate_deturck_ode(W_path, mesh, stop_index=1)
    pulled = ricci_flow_from(metrics, maps)
    report = ricci_residual(pulled)
    frame = frame.copy()
    for offset, value in enumerate(report.values):
        if np.isfinite(value):
            frame.loc[frame["step"] == offset + 1, "ricci_residual"] = value
    return frame


def simulate(config: ScenarioConfig) -> Union[FlowTrajectory, WarpedTrajectory]:
    """Flow the initial metric of a scenario: DeTurck flow on the doubled torus, reduced flow otherwise."""
    state = build_initial_metric(config)
    if config.domain is Domain.TORUS_DOUBLED:
        options = DiagnosticsOptions.from_dict(config.diagnostics, config.pic_sample, config.seed)
        return flow(state, config.mesh(), config.theta, options, doubled=True)
    return reduced_flow(state, config.mesh(), config.theta,
                        stride=int(config.diagnostics.get("stride", 1)),
                        cones=bool(config.diagnostics.get("cones", False)),
                        pic_sample=config.pic_sample, seed=config.seed)


class RunService:
    """
    Runs scenarios. Singleton, thread-safe.

    Usage:
        service = RunService()
        result = service.run(load_scenario("round.json"))
    """

    _instance: Optional['RunService'] = None
    _lock = threading.Lock()

    def __new__(cls):
        if cls._instance is None:
            with cls._lock:
                if cls._instance is None:
                    cls._instance = super().__new__(cls)
        return cls._instance

    def __init__(self):
        """Initialize the RunService."""
        if hasattr(self, '_initialized'):
            return
        self._initialized = True
        self._logger = get_logger()
        self._logger.debug("RunService initialized")

    def run(self, config: ScenarioConfig, out_dir: Optional[Union[str, Path]] = None) -> RunResult:
        """
        Run a scenario and write diagnostics.csv, dyadic checkpoints and summary.json.

        A flow that halts still has its partial outputs written before its
        error is re-raised.

        Args:
            config: Validated scenario
            out_dir: Output root overriding the scenario's output_dir

        Returns:
            RunResult with the diagnostics table and written paths
        """
        writer = ReportWriter(config, out_dir)
        self._logger.info(f"Running scenario '{config.name}' ({config.domain.value}, n={config.n}, "
                          f"resolution {config.resolution}, {config.steps} steps to T={config.T})")
        torus = config.domain is Domain.TORUS_DOUBLED
        trajectory = simulate(config)
        frame = trajectory.frame()
        error = trajectory.error
        if torus and not trajectory.halted and config.diagnostics.get("gauge", False):
            try:
                frame = attach_ricci_residual(trajectory, frame)
            except NumericalError as e:
                error = e
                log_exception_structured(e, {"scenario": config.name, "stage": "gauge"})

        states = trajectory.metrics if torus else trajectory.states
        csv_path = writer.write_diagnostics(frame)
        checkpoints = writer.write_checkpoints(states, config.mesh().times, doubled=torus)
        result = RunResult(scenario=config.name, frame=frame, csv_path=csv_path, checkpoints=checkpoints,
                           halted=trajectory.halted, halt_reason=trajectory.halt_reason)
        summary = {
            "halted": result.halted,
            "halt_reason": result.halt_reason,
            "steps_completed": result.steps_completed,
            "final_time": float(frame["t"].iloc[-1]) if not frame.empty else 0.0,
            "diagnostics": csv_path.name,
            "checkpoints": [p.name for p in checkpoints],
        }
        if torus:
            summary["max_drift"] = float(frame["drift"].max())
        else:
            summary["final_c2"] = float(frame["c2"].iloc[-1])
        result.summary_path = writer.write_summary(summary)
        self._logger.info(f"Scenario '{config.name}' wrote {len(writer.written)} files to {writer.directory}")
        if error is not None:
            error.details.setdefault("scenario", config.name)
            raise error
        return result
