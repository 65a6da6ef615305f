#!/usr/bin/env python3
# run_config.py - Run configuration, result envelopes and CSV output

import csv
import io
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import yaml

from socketlsh import __version__
from socketlsh.errors import FormatError, ParameterError, StorageError
from socketlsh.kv_format import atomic_write_bytes
from socketlsh.settings import FORMAT_VERSION

OUTPUT_FORMATS = ("csv", "json")

# execution resources: never embedded in outputs
_RUNTIME_FIELDS = ("threads",)


@dataclass
class RunConfig:
    """Every parameter of one CLI run; None means the command default applies."""

    command: str
    subcommand: Optional[str] = None
    N: Optional[int] = None
    d: Optional[int] = None
    P: Optional[int] = None
    L: Optional[int] = None
    tau: Optional[float] = None
    k: Optional[int] = None
    mode: str = "exact"
    sink: Optional[int] = None
    window: Optional[int] = None
    M: Optional[int] = None
    seed: Optional[int] = None
    seeds: Optional[int] = None
    k_grid: Optional[List[int]] = None
    l_grid: Optional[List[int]] = None
    m_grid: Optional[List[int]] = None
    tau_grid: Optional[List[float]] = None
    replicas: Optional[int] = None
    mc_tables: Optional[int] = None
    mc_pairs: Optional[int] = None
    bins: Optional[int] = None
    scale: bool = False
    orthonormal: bool = True
    kv: Optional[str] = None
    mask: Optional[str] = None
    index: Optional[str] = None
    index_out: Optional[str] = None
    query_index: Optional[int] = None
    query_file: Optional[str] = None
    queries: Optional[int] = None
    out: Optional[str] = None
    format: str = "csv"
    threads: int = 1
    format_version: str = FORMAT_VERSION

    def __post_init__(self):
        if self.format not in OUTPUT_FORMATS:
            raise ParameterError(f"format must be one of {OUTPUT_FORMATS}, got {self.format!r}")
        if self.threads < 1:
            raise ParameterError(f"threads must be >= 1, got {self.threads}")

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        for name in _RUNTIME_FIELDS:
            data.pop(name)
        return data

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, default=_json_default)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ParameterError(f"unknown run-config fields: {', '.join(unknown)}")
        version = str(data.get("format_version", FORMAT_VERSION))
        if version != FORMAT_VERSION:
            raise FormatError(f"run config has format_version {version}, expected {FORMAT_VERSION}")
        if "command" not in data:
            raise ParameterError("run config needs a 'command'")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "RunConfig":
        """Read a run config from a JSON or YAML file."""
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise StorageError(f"could not read run config {path}: {e}") from e
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as e:
            raise FormatError(f"run config {path} is not valid YAML/JSON: {e}") from e
        if not isinstance(data, dict):
            raise FormatError(f"run config {path} must hold a mapping")
        return cls.from_dict(data)

    def merged(self, overrides: Dict[str, Any]) -> "RunConfig":
        """Copy with every non-None override applied."""
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def with_defaults(self, defaults: Dict[str, Any]) -> "RunConfig":
        """Copy with `defaults` filled in where this config has None."""
        return replace(self, **{k: v for k, v in defaults.items() if getattr(self, k) is None})


@dataclass
class ResultEnvelope:
    config: RunConfig
    results: Dict[str, Any]
    timings: Dict[str, float] = field(default_factory=dict)
    checks: Dict[str, bool] = field(default_factory=dict)
    code_version: str = __version__

    @property
    def failed_checks(self) -> List[str]:
        return sorted(name for name, ok in self.checks.items() if not ok)

    def payload(self) -> Dict[str, Any]:
        """Everything except timings; identical across reruns of the same config."""
        return {
            "config": self.config.to_dict(),
            "results": self.results,
            "checks": self.checks,
            "code_version": self.code_version,
        }

    def to_dict(self) -> Dict[str, Any]:
        data = self.payload()
        data["timings"] = self.timings
        return data

    def to_json(self) -> str:
        return json.dumps(to_jsonable(self.to_dict()), sort_keys=True, indent=2) + "\n"


def _json_default(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if hasattr(value, "item"):
        return value.item()
    return str(value)


def to_jsonable(value):
    """Plain JSON types from nested dicts/lists holding numpy values."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    return value


def format_cell(value) -> str:
    """CSV cell text; floats keep 17 significant digits."""
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".17g")
    if value is None:
        return ""
    return str(value)


def render_csv(rows: List[Dict[str, Any]], config: RunConfig) -> str:
    """`#`-prefixed JSON config line, header row, then one line per row."""
    buffer = io.StringIO()
    buffer.write(f"# config: {config.to_json()}\n")
    buffer.write(f"# code_version: {__version__}\n")
    if rows:
        header = list(rows[0].keys())
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_cell(row.get(name)) for name in header])
    return buffer.getvalue()


def write_outputs(path, envelope: ResultEnvelope, rows: List[Dict[str, Any]]) -> List[Path]:
    """
    Write the run's outputs and return the paths written.

    csv: rows to `path`, the envelope to `path` + ".json".
    json: the envelope, rows inlined under results["rows"], to `path`.
    """
    path = Path(path)
    if envelope.config.format == "json":
        envelope.results = dict(envelope.results, rows=rows)
        atomic_write_bytes(path, envelope.to_json().encode("utf-8"))
        return [path]
    envelope_path = Path(str(path) + ".json")
    atomic_write_bytes(path, render_csv(rows, envelope.config).encode("utf-8"))
    atomic_write_bytes(envelope_path, envelope.to_json().encode("utf-8"))
    return [path, envelope_path]
