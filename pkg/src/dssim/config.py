from __future__ import annotations

import logging
import os
import platform
from dataclasses import dataclass
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from dssim.power import GovernorConfig, GovernorPolicy
from dssim.workload import Distribution

CONFIG_FILENAME = ".dssim.toml"
OUT_DIR_ENV = "DSSIM_OUT_DIR"

SUPPORTED_GOVERNORS = {policy.value for policy in GovernorPolicy}
SUPPORTED_DISTRIBUTIONS = {distribution.value for distribution in Distribution}


@dataclass(frozen=True)
class SimSettings:
    governor: str = "performance"
    governor_period_us: float = 100.0
    up_threshold: float = 0.8
    down_threshold: float = 0.3
    constant_freq_mhz: float | None = None
    distribution: str = "exponential"
    edge_volume_bytes: float = 0.0
    warmup_fraction: float = 0.1
    out_dir: str = "results"
    jobs: int = 1
    seed: int = 42
    max_time_us: float | None = None

    def governor_config(self) -> GovernorConfig:
        return GovernorConfig(
            policy=GovernorPolicy(self.governor),
            period_us=self.governor_period_us,
            up_threshold=self.up_threshold,
            down_threshold=self.down_threshold,
            constant_freq_mhz=self.constant_freq_mhz,
        )


@dataclass(frozen=True)
class ResolvedSimConfig:
    settings: SimSettings
    sources: dict[str, str]


SIM_KEYS = [
    "governor",
    "governor_period_us",
    "up_threshold",
    "down_threshold",
    "constant_freq_mhz",
    "distribution",
    "edge_volume_bytes",
    "warmup_fraction",
    "out_dir",
    "jobs",
    "seed",
    "max_time_us",
]


def _default_sim_values() -> dict[str, Any]:
    return {key: getattr(SimSettings(), key) for key in SIM_KEYS}


def _normalize_sim_layer(layer: dict[str, Any]) -> dict[str, Any]:
    return {key: value for key, value in layer.items() if key in SIM_KEYS}


def get_global_config_path() -> Path | None:
    system = platform.system().lower()
    if system == "windows":
        appdata = os.environ.get("APPDATA")
        if not appdata:
            return None
        return Path(appdata) / "dssim" / "dssim.toml"
    if system == "darwin":
        return Path.home() / "Library" / "Application Support" / "dssim" / "dssim.toml"
    return Path.home() / ".config" / "dssim" / "dssim.toml"


def load_sim_config_file(path: Path) -> dict[str, Any]:
    if not path.exists():
        return {}
    data = tomllib.loads(path.read_bytes().decode("utf-8"))
    run_section = data.get("run", {})
    if not isinstance(run_section, dict):
        raise ValueError(f"Invalid [run] section in {path}; expected a table.")
    return _normalize_sim_layer(run_section)


def resolve_sim_config(workspace: Path, parameters: dict[str, Any]) -> ResolvedSimConfig:
    values = _default_sim_values()
    sources = {key: "default" for key in values}

    global_path = get_global_config_path()
    if global_path:
        for key, value in load_sim_config_file(global_path).items():
            values[key] = value
            sources[key] = "global"

    discovered = find_workspace_config_file(workspace)
    if discovered is not None:
        for key, value in load_sim_config_file(discovered).items():
            values[key] = value
            sources[key] = "workspace"

    env_out_dir = os.environ.get(OUT_DIR_ENV)
    if env_out_dir:
        values["out_dir"] = env_out_dir
        sources["out_dir"] = "env"

    for key, value in parameters.items():
        if value is None or key not in SIM_KEYS:
            continue
        values[key] = value
        sources[key] = "parameter"

    settings = SimSettings(**values)
    validate_sim_settings(settings)
    return ResolvedSimConfig(settings=settings, sources=sources)


def validate_sim_settings(settings: SimSettings) -> None:
    if settings.governor not in SUPPORTED_GOVERNORS:
        raise ValueError(
            f"Invalid governor '{settings.governor}'. Supported governors: {sorted(SUPPORTED_GOVERNORS)}."
        )
    if not isinstance(settings.governor_period_us, (int, float)) or settings.governor_period_us <= 0:
        raise ValueError("Run governor_period_us must be a positive number.")
    if not 0 < settings.down_threshold < settings.up_threshold <= 1:
        raise ValueError("Run thresholds must satisfy 0 < down_threshold < up_threshold <= 1.")
    if settings.governor == GovernorPolicy.CONSTANT.value and settings.constant_freq_mhz is None:
        raise ValueError("Run governor 'constant' requires constant_freq_mhz.")
    if settings.distribution not in SUPPORTED_DISTRIBUTIONS:
        raise ValueError(
            f"Invalid distribution '{settings.distribution}'. "
            f"Supported distributions: {sorted(SUPPORTED_DISTRIBUTIONS)}."
        )
    if settings.edge_volume_bytes < 0:
        raise ValueError("Run edge_volume_bytes must be >= 0.")
    if not 0 <= settings.warmup_fraction < 1:
        raise ValueError("Run warmup_fraction must be in [0, 1).")
    if not isinstance(settings.jobs, int) or settings.jobs < 1:
        raise ValueError("Run jobs must be a positive integer.")
    if not isinstance(settings.seed, int):
        raise ValueError("Run seed must be an integer.")
    if settings.max_time_us is not None and settings.max_time_us <= 0:
        raise ValueError("Run max_time_us must be positive when set.")
    if not isinstance(settings.out_dir, str) or not settings.out_dir.strip():
        raise ValueError("Run out_dir must be a non-empty path string.")


def log_resolved_sim_config(resolved: ResolvedSimConfig) -> None:
    logger = logging.getLogger("dssim")
    settings = resolved.settings
    logger.info("Run config resolved: governor=%s out_dir=%s", settings.governor, settings.out_dir)
    for key in SIM_KEYS:
        logger.info(
            "Run config %s=%s (source=%s)",
            key,
            getattr(settings, key),
            resolved.sources.get(key, "default"),
        )


def find_workspace_config_file(start: Path) -> Path | None:
    current = start.resolve()
    for directory in [current, *current.parents]:
        candidate = directory / CONFIG_FILENAME
        if candidate.exists():
            return candidate
    return None
