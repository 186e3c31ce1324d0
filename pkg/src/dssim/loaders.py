"""Description files (SoC, application, workload, static table) and built-in assets."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, TypeVar

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from dssim.model import AppGraph, PeKind, PeType, ResourceDb
from dssim.power import Opp
from dssim.sched import StaticTable
from dssim.workload import ArrivalPlan, Distribution, builtin_wifi_tx

BUILTIN_SOCS = ("big_little",)
BUILTIN_APPS = ("wifi_tx",)

_Model = TypeVar("_Model", bound=BaseModel)


class DescriptionError(ValueError):
    pass


class WorkloadFile(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    app: str
    distribution: Distribution = Distribution.EXPONENTIAL
    rate_jobs_per_ms: float = Field(gt=0)
    duration_us: float = Field(gt=0)
    seed: int = 0


def _opp(freq_mhz: float, voltage_v: float, dyn_power_mw: float, static_power_mw: float) -> Opp:
    return Opp(freq_mhz=freq_mhz, voltage_v=voltage_v, dyn_power_mw=dyn_power_mw, static_power_mw=static_power_mw)


def builtin_big_little_soc() -> ResourceDb:
    """4x A15, 4x A7, 2x scrambler-encoder and 4x FFT accelerators with synthetic OPP tables."""
    return ResourceDb(
        pe_types=[
            PeType(name="A15", kind=PeKind.GENERAL_PURPOSE, count=4, freq_domain="big"),
            PeType(name="A7", kind=PeKind.GENERAL_PURPOSE, count=4, freq_domain="little"),
            PeType(name="SCRAMBLER_ACC", kind=PeKind.ACCELERATOR, count=2, freq_domain="scrambler_acc"),
            PeType(name="FFT_ACC", kind=PeKind.ACCELERATOR, count=4, freq_domain="fft_acc"),
        ],
        opp_tables={
            "big": [
                _opp(600, 0.90, 300, 60),
                _opp(1000, 0.95, 600, 80),
                _opp(1400, 1.05, 1100, 100),
                _opp(1800, 1.15, 1800, 130),
                _opp(2000, 1.25, 2400, 160),
            ],
            "little": [
                _opp(600, 0.90, 60, 15),
                _opp(800, 0.95, 90, 18),
                _opp(1000, 1.00, 130, 22),
                _opp(1200, 1.10, 190, 27),
                _opp(1400, 1.20, 260, 33),
            ],
            "scrambler_acc": [_opp(250, 0.90, 40, 5)],
            "fft_acc": [_opp(500, 0.90, 120, 12)],
        },
        ref_freq_mhz={"big": 2000, "little": 1400},
        power_model="synthetic",
    )


def _read_mapping(path: Path) -> dict[str, Any]:
    if not path.exists():
        raise DescriptionError(f"Description file '{path}' does not exist.")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise DescriptionError(f"Description file '{path}' could not be read: {exc}") from exc
    if not isinstance(data, dict):
        raise DescriptionError(f"Description file '{path}' must contain a mapping.")
    return data


def _parse(model: type[_Model], data: dict[str, Any], path: Path) -> _Model:
    try:
        return model.model_validate(data)
    except ValidationError as exc:
        problems = "; ".join(
            f"{'.'.join(str(part) for part in error['loc']) or '<root>'}: {error['msg']}" for error in exc.errors()
        )
        raise DescriptionError(f"{path}: {problems}") from exc


def load_soc(path: Path) -> ResourceDb:
    return _parse(ResourceDb, _read_mapping(path), path)


def load_app(path: Path) -> AppGraph:
    return _parse(AppGraph, _read_mapping(path), path)


def load_table(path: Path) -> StaticTable:
    return _parse(StaticTable, _read_mapping(path), path)


def resolve_soc(ref: str) -> ResourceDb:
    if ref in BUILTIN_SOCS:
        return builtin_big_little_soc()
    return load_soc(Path(ref))


def resolve_app(ref: str, edge_volume_bytes: float = 0.0, base_dir: Path | None = None) -> AppGraph:
    if ref in BUILTIN_APPS:
        return builtin_wifi_tx(edge_volume_bytes)
    path = Path(ref)
    if base_dir is not None and not path.is_absolute():
        path = base_dir / path
    return load_app(path)


def load_workload(path: Path, edge_volume_bytes: float = 0.0) -> ArrivalPlan:
    workload = _parse(WorkloadFile, _read_mapping(path), path)
    app = resolve_app(workload.app, edge_volume_bytes, base_dir=path.parent)
    return ArrivalPlan(
        app=app,
        distribution=workload.distribution,
        rate_jobs_per_ms=workload.rate_jobs_per_ms,
        duration_us=workload.duration_us,
        seed=workload.seed,
    )


def _write_json(path: Path, payload: dict[str, Any]) -> Path:
    path.write_text(json.dumps(payload, ensure_ascii=True, indent=2) + "\n", encoding="utf-8")
    return path


def dump_table(table: StaticTable, path: Path) -> Path:
    return _write_json(path, table.model_dump(mode="json"))


def dump_builtins(out_dir: Path) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    workload = WorkloadFile(app="wifi_tx.app.json", rate_jobs_per_ms=5, duration_us=1_000_000, seed=42)
    return [
        _write_json(out_dir / "big_little.soc.json", builtin_big_little_soc().model_dump(mode="json")),
        _write_json(out_dir / "wifi_tx.app.json", builtin_wifi_tx().model_dump(mode="json")),
        _write_json(out_dir / "workload.json", workload.model_dump(mode="json")),
    ]
