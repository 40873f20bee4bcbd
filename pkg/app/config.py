from __future__ import annotations

import cmath
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import yaml

from app.discretization import Grid, normalize_boundary, validate_grid
from app.evolution import EvolutionConfig, check_against_spec
from app.potential import PotentialSpec

STATE_KINDS = {"coherent", "random_phase", "file"}
BASIS_KINDS = {"cap", "wkb"}
NAME_PATTERN = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_.-]*$")
CONFIG_FILE = "config.yaml"
NUMERICS_FILE = "config.numerics.yaml"


class ConfigError(RuntimeError):
    pass


@dataclass
class PotentialSection:
    m: float = 1.0
    omega: float = 1.0
    L: float = 6.0
    V_b: float = 18.0
    w: float = 0.9
    x_cap: float = 56.9
    eta: float = 3e-4
    delta: float = 0.3
    hbar: float = 1.0

    def to_spec(self) -> PotentialSpec:
        return PotentialSpec(**asdict(self))


@dataclass
class GridSection:
    x_min: float = -12.0
    x_max: float | None = None
    h: float = 0.02
    cap_length: float = 25.0

    def resolve(self, spec: PotentialSpec) -> Grid:
        x_max = self.x_max if self.x_max is not None else spec.x_cap + self.cap_length
        return Grid.from_spacing(self.x_min, x_max, self.h)


@dataclass
class EvolutionSection:
    dt: float | None = None
    T: float | None = None
    periods: float = 10.0
    record_stride: int = 10
    boundary: str = "cap"
    snapshot_stride: int = 0

    def resolve(self, spec: PotentialSpec, boundary: str | None = None) -> EvolutionConfig:
        defaults = EvolutionConfig.for_spec(spec, self.periods)
        return EvolutionConfig(
            dt=self.dt if self.dt is not None else defaults.dt,
            T=self.T if self.T is not None else defaults.T,
            record_stride=self.record_stride,
            boundary=boundary or self.boundary,
            snapshot_stride=self.snapshot_stride,
        )


@dataclass
class StateSection:
    kind: str = "coherent"
    alpha: float = 1.1
    alpha_phase: float = 0.0
    seed: int = 20240611
    n_max: int | None = None
    file: str | None = None
    draws: int = 64

    @property
    def complex_alpha(self) -> complex:
        return self.alpha * cmath.exp(1j * self.alpha_phase)


@dataclass
class SpectralSection:
    max_count: int = 12
    basis: str = "cap"


@dataclass
class WkbSection:
    samples: int = 240
    order: int = 64
    exact_g: bool = False


@dataclass
class RunConfig:
    experiment: str = "numerics"
    output_dir: str = "runs"
    x_T: float | None = None
    potential: PotentialSection = field(default_factory=PotentialSection)
    grid: GridSection = field(default_factory=GridSection)
    evolution: EvolutionSection = field(default_factory=EvolutionSection)
    state: StateSection = field(default_factory=StateSection)
    spectral: SpectralSection = field(default_factory=SpectralSection)
    wkb: WkbSection = field(default_factory=WkbSection)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def spec(self) -> PotentialSpec:
        return self.potential.to_spec()

    def x_t(self) -> float:
        return self.x_T if self.x_T is not None else self.spec().default_x_t


DEFAULT_CONFIG = RunConfig()


def _merge_dict(base: dict[str, Any], updates: dict[str, Any]) -> dict[str, Any]:
    result = dict(base)
    for key, value in updates.items():
        if key in result and isinstance(result[key], dict) and isinstance(value, dict):
            result[key] = _merge_dict(result[key], value)
        else:
            result[key] = value
    return result


def apply_overrides(data: dict[str, Any], overrides: dict[str, Any]) -> dict[str, Any]:
    result = dict(data)
    for dotted, value in overrides.items():
        parts = dotted.split(".")
        nested: dict[str, Any] = {parts[-1]: value}
        for part in reversed(parts[:-1]):
            nested = {part: nested}
        result = _merge_dict(result, nested)
    return result


def _section(merged: dict[str, Any], name: str) -> dict[str, Any]:
    item = merged.get(name)
    if not isinstance(item, dict):
        raise ConfigError(f"{name} must be an object")
    known = set(DEFAULT_CONFIG.to_dict()[name])
    unknown = sorted(set(item) - known)
    if unknown:
        raise ConfigError(f"unknown config key: {name}.{unknown[0]}")
    return item


def _required(item: dict[str, Any], path: str, key: str) -> Any:
    if item.get(key) is None:
        raise ConfigError(f"{path}.{key} is required")
    return item[key]


def _float(item: dict[str, Any], path: str, key: str, optional: bool = False) -> float | None:
    if optional and item.get(key) is None:
        return None
    value = _required(item, path, key)
    if isinstance(value, bool):
        raise ConfigError(f"{path}.{key} must be a number")
    try:
        return float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}.{key} must be a number") from exc


def _int(item: dict[str, Any], path: str, key: str, optional: bool = False) -> int | None:
    if optional and item.get(key) is None:
        return None
    value = _required(item, path, key)
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
        raise ConfigError(f"{path}.{key} must be an integer")
    return int(value)


def _top_level_x_t(merged: dict[str, Any]) -> float | None:
    value = merged.get("x_T")
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError("x_T must be a number")
    return float(value)


def _to_potential(item: dict[str, Any]) -> PotentialSection:
    section = PotentialSection(**{key: _float(item, "potential", key) for key in asdict(PotentialSection())})
    try:
        section.to_spec()
    except ValueError as exc:
        raise ConfigError(f"potential.{exc}") from exc
    return section


def _to_grid(item: dict[str, Any]) -> GridSection:
    section = GridSection(
        x_min=_float(item, "grid", "x_min"),
        x_max=_float(item, "grid", "x_max", optional=True),
        h=_float(item, "grid", "h"),
        cap_length=_float(item, "grid", "cap_length"),
    )
    if section.h <= 0:
        raise ConfigError("grid.h must be > 0")
    if section.cap_length < 0:
        raise ConfigError("grid.cap_length must be >= 0")
    return section


def _to_evolution(item: dict[str, Any]) -> EvolutionSection:
    boundary = _required(item, "evolution", "boundary")
    try:
        boundary = normalize_boundary(str(boundary))
    except ValueError as exc:
        raise ConfigError(f"evolution.{exc}") from exc
    section = EvolutionSection(
        dt=_float(item, "evolution", "dt", optional=True),
        T=_float(item, "evolution", "T", optional=True),
        periods=_float(item, "evolution", "periods"),
        record_stride=_int(item, "evolution", "record_stride"),
        boundary=boundary,
        snapshot_stride=_int(item, "evolution", "snapshot_stride"),
    )
    if section.periods <= 0:
        raise ConfigError("evolution.periods must be > 0")
    return section


def _to_state(item: dict[str, Any]) -> StateSection:
    kind = str(_required(item, "state", "kind"))
    if kind not in STATE_KINDS:
        raise ConfigError(f"state.kind must be one of {', '.join(sorted(STATE_KINDS))}")
    section = StateSection(
        kind=kind,
        alpha=_float(item, "state", "alpha"),
        alpha_phase=_float(item, "state", "alpha_phase"),
        seed=_int(item, "state", "seed"),
        n_max=_int(item, "state", "n_max", optional=True),
        file=str(item["file"]) if item.get("file") else None,
        draws=_int(item, "state", "draws"),
    )
    if section.alpha < 0:
        raise ConfigError("state.alpha must be >= 0 (use state.alpha_phase for the phase)")
    if section.n_max is not None and section.n_max < 0:
        raise ConfigError("state.n_max must be >= 0")
    if section.seed < 0:
        raise ConfigError("state.seed must be >= 0")
    if section.draws < 1:
        raise ConfigError("state.draws must be >= 1")
    if kind == "file" and not section.file:
        raise ConfigError("state.file is required when state.kind is file")
    return section


def _validate(merged: dict[str, Any]) -> RunConfig:
    known = set(DEFAULT_CONFIG.to_dict())
    unknown = sorted(set(merged) - known)
    if unknown:
        raise ConfigError(f"unknown config key: {unknown[0]}")
    experiment = merged.get("experiment")
    if experiment is None or not str(experiment).strip():
        raise ConfigError("experiment is required")
    experiment = str(experiment)
    if not NAME_PATTERN.match(experiment):
        raise ConfigError("experiment must be a filesystem-safe token ([A-Za-z0-9_.-])")
    output_dir = merged.get("output_dir")
    if not isinstance(output_dir, str) or not output_dir.strip():
        raise ConfigError("output_dir must be a non-empty string")

    potential = _to_potential(_section(merged, "potential"))
    grid = _to_grid(_section(merged, "grid"))
    evolution = _to_evolution(_section(merged, "evolution"))
    state = _to_state(_section(merged, "state"))
    spectral_item = _section(merged, "spectral")
    spectral = SpectralSection(
        max_count=_int(spectral_item, "spectral", "max_count"),
        basis=str(_required(spectral_item, "spectral", "basis")),
    )
    if spectral.max_count < 1:
        raise ConfigError("spectral.max_count must be >= 1")
    if spectral.basis not in BASIS_KINDS:
        raise ConfigError("spectral.basis must be cap or wkb")
    wkb_item = _section(merged, "wkb")
    wkb = WkbSection(
        samples=_int(wkb_item, "wkb", "samples"),
        order=_int(wkb_item, "wkb", "order"),
        exact_g=bool(wkb_item.get("exact_g", False)),
    )
    if wkb.samples < 8:
        raise ConfigError("wkb.samples must be >= 8")
    if wkb.order < 4:
        raise ConfigError("wkb.order must be >= 4")

    config = RunConfig(
        experiment=experiment,
        output_dir=output_dir,
        x_T=_top_level_x_t(merged),
        potential=potential,
        grid=grid,
        evolution=evolution,
        state=state,
        spectral=spectral,
        wkb=wkb,
    )
    spec = config.spec()
    try:
        resolved = grid.resolve(spec)
        validate_grid(resolved, spec)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    x_t = config.x_t()
    if not spec.L + spec.w <= x_t < resolved.x_max - 2.0 * resolved.h:
        raise ConfigError("x_T must lie in the free region between L + w and the grid end")
    if spec.eta > 0 and x_t >= spec.x_cap:
        raise ConfigError("x_T must lie left of x_cap")
    try:
        check_against_spec(evolution.resolve(spec), spec)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return config


def load_config(
    project_root: Path,
    path: Path | None = None,
    overrides: dict[str, Any] | None = None,
) -> RunConfig:
    if path is not None:
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        source_path: Path | None = path
    else:
        config_yaml = project_root / CONFIG_FILE
        numerics_yaml = project_root / NUMERICS_FILE
        source_path = config_yaml if config_yaml.exists() else numerics_yaml if numerics_yaml.exists() else None

    data: dict[str, Any] = {}
    if source_path is not None:
        loaded = yaml.safe_load(source_path.read_text(encoding="utf-8")) or {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"Invalid config format in {source_path}")
        data = loaded

    merged = _merge_dict(DEFAULT_CONFIG.to_dict(), data)
    if overrides:
        merged = apply_overrides(merged, overrides)
    return _validate(merged)
