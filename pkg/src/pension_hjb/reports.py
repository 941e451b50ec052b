"""CSV and JSON writers plus the run manifest."""

from __future__ import annotations

import csv
import json
import platform
import sys
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np


def _plain(obj: Any):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if np.isnan(v):
            return None
        if np.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def write_json(path: Path, payload: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_plain(payload), indent=2) + "\n", encoding="utf-8")
    return path


def write_csv(path: Path, columns: Sequence[str], rows: Iterable[Sequence] | np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def versions() -> dict[str, str]:
    out = {"python": platform.python_version(), "numpy": np.__version__}
    for pkg in ("scipy", "artifact"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = "unknown"
    return out


@dataclass
class Manifest:
    command: str
    argv: list[str]
    scenario_params: dict      # scenario as loaded, before command-line overrides; enough to replay
    params: dict               # effective parameters after overrides
    flags: dict
    seeds: list[int] = field(default_factory=list)
    artifacts: list[str] = field(default_factory=list)
    wall_time_s: float = 0.0
    status: int = 0

    def write(self, out_dir: Path) -> Path:
        payload = {
            "command": self.command,
            "argv": self.argv,
            "scenario_params": self.scenario_params,
            "params": self.params,
            "flags": self.flags,
            "seeds": self.seeds,
            "artifacts": self.artifacts,
            "wall_time_s": self.wall_time_s,
            "exit_status": self.status,
            "versions": versions(),
            "platform": platform.platform(),
            "executable": sys.executable,
        }
        return write_json(Path(out_dir) / "manifest.json", payload)
