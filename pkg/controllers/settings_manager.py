"""
Settings Manager for RicciLab.
Handles user-level defaults and scenario files.
"""

import dataclasses
import json
import math
import threading
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from flows.doubling import double_metric
from flows.rotsym import (WarpedMetric, cap_corner_warp, mollify_warped, neck_warp, round_warp,
                          sphere_grid)
from geometry.grid import Grid
from geometry.tensorfield import MetricField, mollify
from models.data_models import AxisSpec, AxisTopology, Domain, GridSpec, ScenarioConfig
from utils.exceptions import ConfigurationError
from utils.logger import get_logger


class SettingsManager:
    """
    Manages user settings.

    Singleton class with thread-safe access to settings.
    Uses caching to minimize disk I/O operations.
    """

    _instance = None
    _lock = threading.Lock()

    DEFAULT_SETTINGS = {
        "output_dir": str(Path.home() / "riccilab_runs"),
        "seed": 0,
        "pic_sample": 64,
        "study_workers": 2,
        "debug": False,
    }

    def __new__(cls, config_path: Optional[str] = None):
        """
        Create or return singleton instance with double-checked locking.

        Args:
            config_path: Path to configuration file. Only used on first instantiation.

        Returns:
            Singleton instance of SettingsManager
        """
        if cls._instance is None:
            with cls._lock:
                if cls._instance is None:
                    instance = super().__new__(cls)
                    cls._instance = instance
        return cls._instance

    def __init__(self, config_path: Optional[str] = None):
        """
        Initialize SettingsManager.

        Args:
            config_path: Path to configuration file. If None, uses default location.
        """
        if hasattr(self, '_initialized'):
            return

        self._initialized = True
        self._logger = get_logger()
        self._cache_lock = threading.RLock()

        if config_path is None:
            config_dir = Path.home() / ".config" / "riccilab"
            config_dir.mkdir(parents=True, exist_ok=True)
            config_path = config_dir / "settings.json"

        self.config_path = Path(config_path)
        self._settings_cache = self._load_settings()
        self._logger.debug(f"SettingsManager initialized with config at {self.config_path}")

    def _load_settings(self) -> dict:
        """
        Load settings from file or return defaults.

        Returns:
            Dictionary of settings
        """
        if self.config_path.exists():
            try:
                with open(self.config_path, 'r', encoding='utf-8') as f:
                    loaded_settings = json.load(f)
                settings = self.DEFAULT_SETTINGS.copy()
                settings.update(loaded_settings)
                self._logger.debug(f"Settings loaded from {self.config_path}")
                return settings
            except (json.JSONDecodeError, IOError) as e:
                self._logger.error(f"Error loading settings: {e}. Using defaults.")
                return self.DEFAULT_SETTINGS.copy()

        self._logger.debug("No settings file found, using defaults")
        return self.DEFAULT_SETTINGS.copy()

    def save_settings(self) -> bool:
        """
        Save current settings to file.

        Returns:
            True if successful, False otherwise.
        """
        with self._cache_lock:
            try:
                self.config_path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.config_path, 'w', encoding='utf-8') as f:
                    json.dump(self._settings_cache, f, indent=2)
                self._logger.debug(f"Settings saved to {self.config_path}")
                return True
            except IOError as e:
                self._logger.error(f"Error saving settings: {e}")
                return False

    def get(self, key: str, default=None):
        """Get a setting value (thread-safe)."""
        with self._cache_lock:
            return self._settings_cache.get(key, default)

    def set(self, key: str, value) -> None:
        """Set a setting value and save (thread-safe)."""
        with self._cache_lock:
            self._settings_cache[key] = value
            self.save_settings()

    def get_output_dir(self) -> str:
        with self._cache_lock:
            return self._settings_cache["output_dir"]

    def set_output_dir(self, path: str) -> None:
        self.set("output_dir", str(path))

    def get_study_workers(self) -> int:
        with self._cache_lock:
            return int(self._settings_cache["study_workers"])

    def set_study_workers(self, workers: int) -> None:
        """Set the number of concurrent study members (1-16)."""
        if not isinstance(workers, int) or not 1 <= workers <= 16:
            raise ValueError("study_workers must be an integer between 1 and 16")
        self.set("study_workers", workers)

    def set_pic_sample(self, sample: int) -> None:
        if not isinstance(sample, int) or sample < 1:
            raise ValueError("pic_sample must be a positive integer")
        self.set("pic_sample", sample)

    def reset_to_defaults(self) -> None:
        """Reset all settings to default values (thread-safe)."""
        with self._cache_lock:
            self._settings_cache = self.DEFAULT_SETTINGS.copy()
            self.save_settings()


# ------------------------------------------------------------------ scenarios
DEFAULT_SCENARIO: Dict[str, Any] = {
    field.name: (field.default if field.default is not dataclasses.MISSING else field.default_factory())
    for field in dataclasses.fields(ScenarioConfig)
}


def _merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def scenario_from_dict(data: Dict[str, Any]) -> ScenarioConfig:
    """Merge ``data`` over the defaults and validate it."""
    unknown = sorted(set(data) - set(DEFAULT_SCENARIO))
    if unknown:
        raise ConfigurationError(f"Unknown scenario keys: {unknown}")
    merged = _merge(DEFAULT_SCENARIO, data)
    try:
        return ScenarioConfig(**merged)
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"Invalid scenario: {e}", details={"scenario": merged.get("name")})


def load_scenario(path: Union[str, Path]) -> ScenarioConfig:
    """Load and validate a JSON scenario file."""
    path = Path(path)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigurationError(f"Cannot read scenario {path}: {e}")
    if not isinstance(data, dict):
        raise ConfigurationError(f"Scenario {path} must hold a JSON object")
    config = scenario_from_dict(data)
    get_logger().debug(f"Scenario '{config.name}' loaded from {path}")
    return config


def apply_overrides(config: ScenarioConfig, seed: Optional[int] = None,
                    resolution: Optional[int] = None, output_dir: Optional[str] = None) -> ScenarioConfig:
    """Copy of ``config`` with command-line overrides, re-validated."""
    changes: Dict[str, Any] = {}
    if seed is not None:
        changes["seed"] = seed
    if resolution is not None:
        changes["resolution"] = resolution
    if output_dir is not None:
        changes["output_dir"] = output_dir
    try:
        return dataclasses.replace(config, **changes)
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"Invalid override: {e}")


# ------------------------------------------------------------------ initial metrics
TORUS_PRESETS = ("flat", "kinked_warp", "conformal_bump", "product", "random_smooth")
ROTSYM_PRESETS = ("round", "cap_corner", "neck")


def half_torus_grid(config: ScenarioConfig) -> Grid:
    """Half domain [0, L] x T^(n-1) whose doubling has ``resolution`` nodes per axis."""
    if config.resolution % 2:
        raise ConfigurationError("torus resolution must be even")
    L = config.extent
    axes = [AxisSpec(AxisTopology.REFLECT_ODD_CAPABLE, L, config.resolution // 2 + 1)]
    axes += [AxisSpec(AxisTopology.PERIODIC, 2.0 * L, config.resolution) for _ in range(config.n - 1)]
    return Grid(GridSpec(tuple(axes), config.order))


def _half_metric(grid: Grid, preset: str, params: Dict[str, Any], seed: int) -> np.ndarray:
    n = grid.dim
    coords = grid.coordinates()
    x = coords[0]
    L = grid.axis(0).extent
    data = np.broadcast_to(np.eye(n), grid.shape + (n, n)).copy()
    tangential = (slice(1, None), slice(1, None))
    if preset == "flat":
        return data
    if preset == "kinked_warp":
        a = float(params.get("a", 1.0))
        if 1.0 + a * L <= 0:
            raise ConfigurationError("kinked_warp needs 1 + a L > 0")
        for i in range(1, n):
            data[..., i, i] = 1.0 + a * x
        return data
    if preset == "conformal_bump":
        eps = float(params.get("eps", 0.1))
        mode = int(params.get("mode", 1))
        f = eps * np.cos(mode * math.pi * x / L)
        if n > 1:
            f = f * (1.0 + 0.5 * np.sin(math.pi * coords[1] / L))
        return np.exp(2.0 * f)[..., None, None] * data
    if preset == "product":
        amp = float(params.get("amp", 0.2))
        bump = 1.0 + amp * np.sin(math.pi * coords[1] / L) if n > 1 else 1.0
        data[(Ellipsis,) + tangential] = data[(Ellipsis,) + tangential] * np.asarray(bump)[..., None, None]
        return data
    if preset == "random_smooth":
        amp = float(params.get("amp", 0.05))
        modes = int(params.get("modes", 2))
        rng = np.random.default_rng(seed)
        for i in range(n):
            for j in range(i, n):
                # g_0a vanish on the mirrors; every other component is even there
                axial = np.sin if (i == 0) != (j == 0) else np.cos
                field = np.zeros(grid.shape)
                for _ in range(modes):
                    k = int(rng.integers(1, 3))
                    wave = axial(k * math.pi * x / L)
                    for a in range(1, n):
                        wave = wave * np.cos(int(rng.integers(0, 2)) * math.pi * coords[a] / L + rng.uniform(0, 2 * math.pi))
                    field = field + rng.normal() * wave
                data[..., i, j] += amp * field
                if i != j:
                    data[..., j, i] += amp * field
        return data
    raise ConfigurationError(f"Unknown torus preset '{preset}' (expected one of {TORUS_PRESETS})")


def build_half_metric(config: ScenarioConfig) -> MetricField:
    params = {k: v for k, v in config.initial.items() if k != "preset"}
    grid = half_torus_grid(config)
    return MetricField(grid, _half_metric(grid, config.initial["preset"], params, config.seed), time=0.0)


def build_initial_metric(config: ScenarioConfig) -> Union[MetricField, WarpedMetric]:
    """
    Initial metric of a scenario: a doubled torus metric or a warped metric.

    ``initial.mollify`` smooths the preset at that many grid spacings.
    """
    state = _preset_metric(config)
    factor = config.initial.get("mollify")
    if not factor:
        return state
    try:
        if isinstance(state, WarpedMetric):
            return mollify_warped(state, float(factor) * state.grid.spacings[0])
        return mollify(state, float(factor) * min(state.grid.spacings))
    except ValueError as e:
        raise ConfigurationError(f"Invalid mollification: {e}")


def _preset_metric(config: ScenarioConfig) -> Union[MetricField, WarpedMetric]:
    preset = config.initial["preset"]
    params = {k: v for k, v in config.initial.items() if k != "preset"}
    if config.domain is Domain.TORUS_DOUBLED:
        half = build_half_metric(config)
        half.cholesky()
        return double_metric(half)
    hemisphere = config.domain is Domain.ROTSYM_HEMISPHERE_DOUBLED
    grid = sphere_grid(config.resolution, hemisphere=hemisphere, order=config.order)
    if preset == "round":
        return round_warp(grid, config.n, float(params.get("r0", 1.0)))
    if preset == "cap_corner":
        if not hemisphere:
            raise ConfigurationError("cap_corner needs the rotsym_hemisphere_doubled domain")
        return cap_corner_warp(grid, config.n, float(params.get("slope", 0.5)))
    if preset == "neck":
        return neck_warp(grid, config.n, float(params.get("depth", 0.4)))
    raise ConfigurationError(f"Unknown rotsym preset '{preset}' (expected one of {ROTSYM_PRESETS})")
