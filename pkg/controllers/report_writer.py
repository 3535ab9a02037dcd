"""
Report Writer for RicciLab.
Writes diagnostics CSVs, dyadic checkpoints and JSON summaries for a scenario.
"""

import json
import math
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from flows.rotsym import WarpedMetric
from geometry.metric_io import warped_document, write_document, write_metric
from geometry.tensorfield import MetricField
from models.data_models import ScenarioConfig
from utils.exceptions import MetricFileError
from utils.logger import get_logger

VERSION = "0.1.0"
FLOAT_FORMAT = "%.17g"


def dyadic_checkpoints(times: Sequence[float], levels: Optional[int] = None) -> List[int]:
    """
    Indices of the levels nearest to T 2^-j, j = 0, 1, ...

    Scales below the first positive time are dropped. The result is sorted
    and free of duplicates.
    """
    times = np.asarray(times, dtype=float)
    T = float(times[-1])
    positive = times[times > 0]
    if positive.size == 0:
        return [len(times) - 1]
    finest = float(positive[0])
    count = int(math.floor(math.log2(T / finest))) + 1 if levels is None else levels
    indices = set()
    for j in range(max(count, 1)):
        target = T * 2.0 ** (-j)
        if target < finest:
            break
        indices.add(int(np.argmin(np.abs(times - target))))
    return sorted(indices)


class ReportWriter:
    """
    Writes the outputs of one scenario under ``<out>/<name>/``.

    Every CSV starts with comment lines carrying the package version and the
    full scenario, so ``pd.read_csv(path, comment="#")`` reads the table.
    """

    def __init__(self, config: ScenarioConfig, out_dir: Optional[Union[str, Path]] = None):
        """
        Initialize ReportWriter.

        Args:
            config: Scenario being reported
            out_dir: Output root. If None, uses the scenario's output_dir.
        """
        self._logger = get_logger()
        self.config = config
        root = Path(out_dir if out_dir is not None else config.output_dir)
        self.directory = root / config.name
        self.written: List[Path] = []
        try:
            self.directory.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise MetricFileError(f"Cannot create output directory {self.directory}: {e}")

    def header_lines(self) -> List[str]:
        config_json = json.dumps(self.config.to_dict(), sort_keys=True)
        return [f"# riccilab {VERSION}", f"# config: {config_json}"]

    def _track(self, path: Path) -> Path:
        self.written.append(path)
        return path

    def write_table(self, frame: pd.DataFrame, filename: str) -> Path:
        """Write a table as CSV below the version and config header."""
        path = self.directory / filename
        try:
            with open(path, 'w', encoding='utf-8', newline='') as f:
                f.write("\n".join(self.header_lines()) + "\n")
                frame.to_csv(f, index=False, float_format=FLOAT_FORMAT)
        except OSError as e:
            raise MetricFileError(f"Cannot write {path}: {e}")
        self._logger.debug(f"Wrote {len(frame)} rows to {path}")
        return self._track(path)

    def write_diagnostics(self, frame: pd.DataFrame) -> Path:
        return self.write_table(frame, "diagnostics.csv")

    def write_checkpoint(self, state: Union[MetricField, WarpedMetric], step: int, doubled: bool = False) -> Path:
        """Write one trajectory level; half-domain metrics carry the half flag."""
        path = self.directory / f"checkpoint_{step:06d}.txt"
        if isinstance(state, WarpedMetric):
            write_document(str(path), warped_document(state.grid, state.psi, state.phi, state.n,
                                                      state.time, state.hemisphere))
        else:
            write_metric(str(path), state, half=state.grid.mirrored, doubled=doubled,
                         extra={"scenario": self.config.name, "step": step})
        return self._track(path)

    def write_checkpoints(self, states: Sequence[Union[MetricField, WarpedMetric]],
                          times: Sequence[float], doubled: bool = False) -> List[Path]:
        """Checkpoints at the dyadic times reached by a (possibly partial) trajectory."""
        reached = np.asarray(times, dtype=float)[:len(states)]
        if reached.size == 0:
            return []
        return [self.write_checkpoint(states[k], k, doubled) for k in dyadic_checkpoints(reached)]

    def write_summary(self, summary: Dict[str, Any], filename: str = "summary.json") -> Path:
        """JSON summary with version, config and a timestamp."""
        path = self.directory / filename
        document = {
            "version": VERSION,
            "written_at": datetime.now().isoformat(timespec="seconds"),
            "config": self.config.to_dict(),
            **summary,
        }
        try:
            with open(path, 'w', encoding='utf-8') as f:
                json.dump(document, f, indent=2, default=_json_default)
        except OSError as e:
            raise MetricFileError(f"Cannot write {path}: {e}")
        return self._track(path)


def _json_default(value: Any):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def read_table(path: Union[str, Path]) -> pd.DataFrame:
    """Read a CSV written by ReportWriter, skipping its header comments."""
    return pd.read_csv(path, comment="#")
