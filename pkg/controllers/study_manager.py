"""
Study Manager for RicciLab.
Runs experiment sweeps on the study worker pool and checks their thresholds.
"""

import dataclasses
import math
import threading
from concurrent.futures import Future
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from controllers.report_writer import ReportWriter
from controllers.run_service import simulate
from controllers.settings_manager import SettingsManager, build_initial_metric
from flows.deturck import DiagnosticsOptions, contraction_sweep
from flows.harmonicmap import uniqueness_gap
from flows.rotsym import equator_value, round_sphere_error
from models.data_models import Domain, ScenarioConfig, StudyKind
from utils.decorators import log_execution_time, with_error_context
from utils.exceptions import AcceptanceError, ConfigurationError, RicciLabException
from utils.logger import get_logger, log_exception_structured
from utils.thread_pool_manager import ThreadPoolManager

MARGIN_FLOOR = -1e-8
SMOOTHING_SLOPE_RANGE = (-0.7, -0.3)
SPHERE_ORDER_RANGE = (1.7, 2.3)
SPHERE_RELATIVE_TOLERANCE = 1e-3
CONTRACTION_RATIO_LIMIT = 0.9
CONTRACTION_EXPONENT_TOLERANCE = 0.25
UNIQUENESS_RATIO_RANGE = (3.0, 5.0)
UNIQUENESS_ABSOLUTE = 1e-2

CONDITION_COLUMNS = {
    "curvature_operator": "min_curv_op_eig",
    "scalar": "min_scal",
    "pic": "pic_margin",
    "pic1": "pic1_margin",
    "pic2": "pic2_margin",
}


def convergence_orders(h: Sequence[float], errors: Sequence[float]) -> np.ndarray:
    """Observed orders log(E_i / E_{i-1}) / log(h_i / h_{i-1}); the first entry is NaN."""
    h = np.asarray(h, dtype=float)
    errors = np.asarray(errors, dtype=float)
    orders = np.full(len(h), np.nan)
    for i in range(1, len(h)):
        if errors[i] > 0 and errors[i - 1] > 0 and h[i] != h[i - 1]:
            orders[i] = math.log(errors[i] / errors[i - 1]) / math.log(h[i] / h[i - 1])
    return orders


def spacing_of(config: ScenarioConfig) -> float:
    """Axis-0 spacing of the grid a scenario runs on."""
    if config.domain is Domain.TORUS_DOUBLED:
        return 2.0 * config.extent / config.resolution
    hemisphere = config.domain is Domain.ROTSYM_HEMISPHERE_DOUBLED
    span = math.pi / 2 if hemisphere else math.pi
    return span / (config.resolution - 1)


def member_configs(config: ScenarioConfig) -> List[ScenarioConfig]:
    """
    One scenario per entry of ``study.resolutions``.

    ``study.dt_scaling = "h2"`` scales the step count with the square of
    the resolution ratio so dt stays proportional to h^2.
    """
    resolutions = config.study.get("resolutions", [config.resolution])
    base = resolutions[0]
    members = []
    for resolution in resolutions:
        steps = config.steps
        if config.study.get("dt_scaling") == "h2":
            steps = int(round(config.steps * (resolution / base) ** 2))
        try:
            members.append(dataclasses.replace(config, name=f"{config.name}_r{resolution}",
                                               resolution=int(resolution), steps=steps))
        except (TypeError, ValueError) as e:
            raise ConfigurationError(f"Invalid study member at resolution {resolution}: {e}")
    return members


# ------------------------------------------------------------------ members
@log_execution_time
@with_error_context(scenario="scenario")
def smoothing_member(config: ScenarioConfig, *, scenario: str) -> Dict[str, Any]:
    """Log-log slope of max |hat-nabla^2 g| over the configured window."""
    trajectory = simulate(dataclasses.replace(
        config, diagnostics={**config.diagnostics, "curvature": False, "boundary": False}))
    if trajectory.halted:
        raise trajectory.error
    t_min = float(config.study.get("t_min", 1e-4))
    t_max = float(config.study.get("t_max", 1e-1))
    return {"resolution": config.resolution, "h": spacing_of(config),
            "slope": trajectory.smoothing_slope(t_min, t_max)}


@log_execution_time
@with_error_context(scenario="scenario")
def preservation_member(config: ScenarioConfig, *, scenario: str) -> Dict[str, Any]:
    """Worst monitored margins over one run of a mollified initial metric."""
    trajectory = simulate(config)
    if trajectory.halted:
        raise trajectory.error
    frame = trajectory.frame()
    row = {"mollify": float(config.initial.get("mollify", 0.0)), "resolution": config.resolution}
    for name, column in CONDITION_COLUMNS.items():
        row[name] = float(frame[column].min()) if frame[column].notna().any() else float("nan")
    row["boundary_A_final"] = float(frame["boundary_A_norm"].iloc[-1])
    row["H_min"] = float(frame["H_min"].min())
    return row


@log_execution_time
@with_error_context(scenario="scenario")
def sphere_member(config: ScenarioConfig, *, scenario: str) -> Dict[str, Any]:
    """Error of the reduced flow against the exactly shrinking round sphere."""
    r0 = float(config.initial.get("r0", 1.0))
    trajectory = simulate(config)
    if trajectory.halted:
        raise trajectory.error
    final = trajectory.final
    exact = r0 * r0 - 2.0 * (config.n - 1) * float(final.time)
    c2 = equator_value(final, final.P)
    return {"resolution": config.resolution, "h": spacing_of(config), "t": float(final.time),
            "error": round_sphere_error(final, r0), "c2": c2, "c2_exact": exact,
            "c2_relative_error": abs(c2 - exact) / abs(exact)}


@log_execution_time
@with_error_context(scenario="scenario")
def uniqueness_member(config: ScenarioConfig, *, scenario: str) -> Dict[str, Any]:
    """Sup gap between the direct DeTurck flow and the harmonic-map route."""
    g0 = build_initial_metric(config)
    options = DiagnosticsOptions(curvature=False, boundary=False, symmetry=False)
    report = uniqueness_gap(g0, config.mesh(), int(config.study.get("start_index", 1)), options)
    return {"resolution": config.resolution, "h": spacing_of(config), "gap": report.gap,
            "max_defect": float(np.nanmax(report.defects)) if np.isfinite(report.defects).any() else float("nan")}


@log_execution_time
@with_error_context(scenario="scenario")
def convergence_member(config: ScenarioConfig, *, scenario: str) -> Dict[str, Any]:
    """Final value of one monitored quantity."""
    quantity = config.study.get("quantity", "boundary_A_norm")
    trajectory = simulate(config)
    if trajectory.halted:
        raise trajectory.error
    frame = trajectory.frame()
    if quantity not in frame.columns:
        raise ConfigurationError(f"Unknown study quantity '{quantity}'")
    values = frame[quantity].dropna()
    return {"resolution": config.resolution, "h": spacing_of(config),
            "t": float(frame["t"].iloc[-1]), quantity: float(values.iloc[-1]) if len(values) else float("nan")}


# ------------------------------------------------------------------ results
@dataclass
class StudyResult:
    """Table, acceptance checks and summary values of one study."""
    kind: StudyKind
    table: pd.DataFrame
    checks: Dict[str, bool] = field(default_factory=dict)
    summary: Dict[str, Any] = field(default_factory=dict)
    failed_members: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failed_members and all(self.checks.values())

    def failed_checks(self) -> List[str]:
        return [name for name, ok in self.checks.items() if not ok]


def _strictly_decreasing(values: Sequence[float]) -> bool:
    values = np.asarray(values, dtype=float)
    return len(values) >= 2 and bool(np.all(np.isfinite(values))) and bool(np.all(np.diff(values) < 0))


class StudyManager:
    """
    Runs study sweeps. Singleton, thread-safe.

    Members run concurrently on the study pool; the table is assembled by
    the calling thread only. A failing member is marked in the table and
    the remaining members still run.

    Usage:
        manager = StudyManager()
        result = manager.run(load_scenario("sphere_bench.json"))
    """

    _instance: Optional['StudyManager'] = None
    _lock = threading.Lock()

    def __new__(cls):
        if cls._instance is None:
            with cls._lock:
                if cls._instance is None:
                    cls._instance = super().__new__(cls)
        return cls._instance

    def __init__(self):
        """Initialize the StudyManager."""
        if hasattr(self, '_initialized'):
            return
        self._initialized = True
        self._logger = get_logger()
        self._pool = ThreadPoolManager()
        self._settings = SettingsManager()
        self._logger.debug("StudyManager initialized")

    # -------------------------------------------------------------- dispatch
    def _run_members(self, member: Callable[..., Dict[str, Any]],
                     configs: Sequence[ScenarioConfig]) -> tuple:
        futures: Dict[str, Future] = {}
        for config in configs:
            futures[config.name] = self._pool.study_pool.submit(member, config, scenario=config.name)
        rows, failed = [], []
        for config in configs:
            try:
                row = futures[config.name].result()
                row.update({"member": config.name, "status": "ok", "error": ""})
            except (RicciLabException, ValueError, ArithmeticError) as e:
                log_exception_structured(e, {"scenario": config.name, "study_member": member.__name__})
                row = {"member": config.name, "resolution": config.resolution, "status": "failed",
                       "error": f"{type(e).__name__}: {e}"}
                failed.append(config.name)
            rows.append(row)
        return pd.DataFrame(rows), failed

    @staticmethod
    def _all_failed(kind: StudyKind, table: pd.DataFrame, failed: List[str]) -> StudyResult:
        return StudyResult(kind, table, {"members_ran": False}, {}, failed)

    @staticmethod
    def _succeeded(table: pd.DataFrame, sort_by: str) -> pd.DataFrame:
        ok = table[table["status"] == "ok"]
        return ok.sort_values(sort_by, ascending=False) if not ok.empty else ok

    def run(self, config: ScenarioConfig, kind: Optional[Union[str, StudyKind]] = None,
            out_dir: Optional[Union[str, Path]] = None, enforce: bool = True) -> StudyResult:
        """
        Run the study named by ``kind`` (or ``config.study["kind"]``).

        Writes ``study_<kind>.csv`` and ``study_<kind>.json``. With
        ``enforce`` a failed threshold or member raises AcceptanceError
        after the outputs are written.
        """
        kind = kind if kind is not None else config.study.get("kind")
        if kind is None:
            raise ConfigurationError("No study kind given")
        try:
            kind = StudyKind(kind) if not isinstance(kind, StudyKind) else kind
        except ValueError:
            raise ConfigurationError(f"Unknown study kind '{kind}' (expected one of {[k.value for k in StudyKind]})")
        if not self._pool.is_study_pool_active():
            self._pool.configure(self._settings.get_study_workers())
        self._logger.info(f"Study '{kind.value}' on scenario '{config.name}'")

        handler = {
            StudyKind.SMOOTHING: self._smoothing,
            StudyKind.CONTRACTION: self._contraction,
            StudyKind.PRESERVATION: self._preservation,
            StudyKind.SPHERE_BENCH: self._sphere_bench,
            StudyKind.UNIQUENESS: self._uniqueness,
            StudyKind.CONVERGENCE: self._convergence,
        }[kind]
        result = handler(config)

        writer = ReportWriter(config, out_dir)
        writer.write_table(result.table, f"study_{kind.value}.csv")
        writer.write_summary({"kind": kind.value, "passed": result.passed, "checks": result.checks,
                              "failed_members": result.failed_members, **result.summary},
                             f"study_{kind.value}.json")
        status = "passed" if result.passed else f"failed {result.failed_checks() + result.failed_members}"
        self._logger.info(f"Study '{kind.value}' {status}")
        if enforce and not result.passed:
            raise AcceptanceError(f"study '{kind.value}' {status}",
                                  details={"kind": kind.value, "failed_checks": result.failed_checks(),
                                           "failed_members": result.failed_members})
        return result

    # -------------------------------------------------------------- kinds
    def _smoothing(self, config: ScenarioConfig) -> StudyResult:
        table, failed = self._run_members(smoothing_member, member_configs(config))
        low, high = config.study.get("slope_range", SMOOTHING_SLOPE_RANGE)
        ok = table[table["status"] == "ok"]
        if ok.empty:
            return self._all_failed(StudyKind.SMOOTHING, table, failed)
        checks = {f"slope_in_range_r{int(r)}": bool(low < s < high) for r, s in zip(ok["resolution"], ok["slope"])}
        return StudyResult(StudyKind.SMOOTHING, table, checks,
                           {"slopes": ok["slope"].tolist()}, failed)

    def _contraction(self, config: ScenarioConfig) -> StudyResult:
        study = config.study
        T_values = study.get("T_values", [0.02, 0.01, 0.005])
        rng = np.random.default_rng(config.seed)
        alpha = float(study.get("alpha", 0.5))
        weight = float(study.get("weight", 0.5 - alpha / 2))
        g0 = build_initial_metric(config)
        future = self._pool.study_pool.submit(
            contraction_sweep, g0, T_values, int(study.get("steps", config.steps)), rng,
            float(study.get("eps", 1e-2)), config.grading, alpha, weight, int(study.get("k", 2)))
        table, exponent = future.result()
        gamma = float(study.get("gamma", 0.5))
        ordered = table.sort_values("T", ascending=False)
        at_limit = table.iloc[int(np.argmin(np.abs(table["T"].to_numpy() - float(study.get("limit_T", 0.01)))))]
        checks = {
            "ratios_decrease_with_T": _strictly_decreasing(ordered["ratio"].to_numpy()),
            "ratio_below_limit": bool(at_limit["ratio"] < CONTRACTION_RATIO_LIMIT),
            "exponent_near_gamma_half": bool(abs(exponent - gamma / 2) <= CONTRACTION_EXPONENT_TOLERANCE),
        }
        return StudyResult(StudyKind.CONTRACTION, table, checks, {"exponent": exponent})

    def _preservation(self, config: ScenarioConfig) -> StudyResult:
        levels = config.study.get("mollify", [4, 8, 16])
        conditions = config.study.get("condition", "curvature_operator")
        if isinstance(conditions, str):
            conditions = [conditions]
        unknown = [c for c in conditions if c not in CONDITION_COLUMNS]
        if unknown or not conditions:
            raise ConfigurationError(f"Unknown preserved condition(s) {unknown}")
        configs = [dataclasses.replace(config, name=f"{config.name}_m{level}",
                                       initial={**config.initial, "mollify": level}) for level in levels]
        table, failed = self._run_members(preservation_member, configs)
        ok = self._succeeded(table, "mollify")
        if ok.empty:
            return self._all_failed(StudyKind.PRESERVATION, table, failed)
        # margins may dip by discretization error of order h^2
        floor = min(MARGIN_FLOOR, -float(config.study.get("margin_constant", 0.0)) * spacing_of(config) ** 2)
        checks = {}
        for condition in conditions:
            checks.update({f"{condition}_preserved_m{m:g}": bool(v >= floor)
                           for m, v in zip(ok["mollify"], ok[condition])})
            if len(ok) >= 3:
                # margins approach their limit as the smoothing scale shrinks
                gaps = np.abs(np.diff(ok[condition].to_numpy()))
                key = "margins_converge" if len(conditions) == 1 else f"{condition}_margins_converge"
                checks[key] = bool(np.all(np.diff(gaps) <= 0))
        summary = {"condition": conditions[0] if len(conditions) == 1 else conditions, "floor": floor}
        return StudyResult(StudyKind.PRESERVATION, table, checks, summary, failed)

    def _sphere_bench(self, config: ScenarioConfig) -> StudyResult:
        if config.domain is Domain.TORUS_DOUBLED or config.initial.get("preset") != "round":
            raise ConfigurationError("sphere_bench needs a rotsym domain with the round preset")
        table, failed = self._run_members(sphere_member, member_configs(config))
        ok = self._succeeded(table, "h")
        if ok.empty:
            return self._all_failed(StudyKind.SPHERE_BENCH, table, failed)
        orders = convergence_orders(ok["h"], ok["error"])
        table = table.merge(pd.DataFrame({"member": ok["member"], "order": orders}), on="member", how="left")
        low, high = SPHERE_ORDER_RANGE
        checks = {"orders_in_range": bool(len(orders) >= 2 and np.all((orders[1:] >= low) & (orders[1:] <= high)))}
        checks["c2_matches_exact"] = bool(ok["c2_relative_error"].iloc[-1] < SPHERE_RELATIVE_TOLERANCE)
        return StudyResult(StudyKind.SPHERE_BENCH, table, checks, {"orders": orders[1:].tolist()}, failed)

    def _uniqueness(self, config: ScenarioConfig) -> StudyResult:
        if config.domain is not Domain.TORUS_DOUBLED:
            raise ConfigurationError("the uniqueness study runs on the doubled torus")
        table, failed = self._run_members(uniqueness_member, member_configs(config))
        ok = self._succeeded(table, "h")
        if ok.empty:
            return self._all_failed(StudyKind.UNIQUENESS, table, failed)
        gaps = ok["gap"].to_numpy()
        ratios = gaps[:-1] / gaps[1:] if len(gaps) >= 2 else np.array([])
        low, high = UNIQUENESS_RATIO_RANGE
        checks = {"gap_ratios_in_range": bool(len(ratios) and np.all((ratios >= low) & (ratios <= high)))}
        checks["finest_gap_small"] = bool(gaps[-1] < float(config.study.get("absolute", UNIQUENESS_ABSOLUTE)))
        return StudyResult(StudyKind.UNIQUENESS, table, checks,
                           {"ratios": ratios.tolist(), "orders": convergence_orders(ok["h"], gaps)[1:].tolist()},
                           failed)

    def _convergence(self, config: ScenarioConfig) -> StudyResult:
        quantity = config.study.get("quantity", "boundary_A_norm")
        expect = config.study.get("expect", "decreasing")
        table, failed = self._run_members(convergence_member, member_configs(config))
        ok = self._succeeded(table, "h")
        if ok.empty:
            return self._all_failed(StudyKind.CONVERGENCE, table, failed)
        values = ok[quantity].to_numpy() if quantity in ok else np.array([])
        if expect == "decreasing":
            checks = {f"{quantity}_decreasing": _strictly_decreasing(values)}
            summary = {"values": values.tolist()}
        elif expect == "converging":
            differences = np.abs(np.diff(values))
            orders = convergence_orders(ok["h"].to_numpy()[1:], differences)
            checks = {f"{quantity}_converging": bool(len(differences) >= 2 and np.all(np.diff(differences) < 0))}
            summary = {"values": values.tolist(), "orders": orders[1:].tolist()}
        else:
            raise ConfigurationError(f"Unknown convergence expectation '{expect}'")
        return StudyResult(StudyKind.CONVERGENCE, table, checks, {"quantity": quantity, **summary}, failed)
