from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from app.versioning import get_library_versions

OUTPUT_ROOT_ENV = "DECAY_LAB_OUTPUT_ROOT"
NUMBER_FORMAT = ".15g"


def resolve_output_root(cli_value: str | None, config_value: str) -> Path:
    if cli_value:
        return Path(cli_value)
    env_value = os.environ.get(OUTPUT_ROOT_ENV, "").strip()
    if env_value:
        return Path(env_value)
    return Path(config_value)


def _cell(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), NUMBER_FORMAT)
    return str(value)


def _json_default(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, complex):
        return {"re": value.real, "im": value.imag}
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"not JSON serializable: {type(value).__name__}")


def write_atomic(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    handle = tempfile.NamedTemporaryFile(
        "w", dir=path.parent, prefix=f".{path.name}.", suffix=".tmp", delete=False, encoding="utf-8", newline=""
    )
    try:
        with handle:
            handle.write(text)
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(handle.name, path)
    except BaseException:
        Path(handle.name).unlink(missing_ok=True)
        raise
    return path


def render_csv(columns: dict[str, Sequence[Any]]) -> str:
    lengths = {len(values) for values in columns.values()}
    if len(lengths) > 1:
        raise ValueError(f"CSV columns differ in length: {sorted(lengths)}")
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(list(columns))
    for row in zip(*columns.values()):
        writer.writerow([_cell(value) for value in row])
    return buffer.getvalue()


def render_json(payload: Any) -> str:
    return json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n"


def config_hash(config: dict[str, Any]) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), default=_json_default)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def read_csv_columns(path: Path) -> dict[str, np.ndarray]:
    with path.open(encoding="utf-8", newline="") as handle:
        rows = list(csv.reader(handle))
    if not rows:
        raise ValueError(f"{path} is empty")
    header, body = rows[0], rows[1:]
    columns: dict[str, np.ndarray] = {}
    for index, name in enumerate(header):
        try:
            columns[name] = np.array([float(row[index]) for row in body])
        except ValueError:
            continue
    return columns


class RunArtifacts:
    """Artifact directory of one subcommand run plus its manifest."""

    def __init__(self, directory: Path, subcommand: str, experiment: str, config: dict[str, Any]) -> None:
        self.directory = directory
        self.subcommand = subcommand
        self.experiment = experiment
        self.config = config
        self.paths: list[Path] = []
        self._started = time.perf_counter()

    def csv(self, name: str, columns: dict[str, Sequence[Any]]) -> Path:
        path = write_atomic(self.directory / name, render_csv(columns))
        self.paths.append(path)
        return path

    def json(self, name: str, payload: Any) -> Path:
        path = write_atomic(self.directory / name, render_json(payload))
        self.paths.append(path)
        return path

    def finish(self) -> Path:
        manifest = {
            "subcommand": self.subcommand,
            "experiment": self.experiment,
            "config_hash": config_hash(self.config),
            "config": self.config,
            "versions": get_library_versions(),
            "wall_time_seconds": round(time.perf_counter() - self._started, 3),
            "generated_at": datetime.now(timezone.utc).isoformat(),
            "artifacts": {path.name: file_digest(path) for path in self.paths},
        }
        return write_atomic(self.directory / "manifest.json", render_json(manifest))
