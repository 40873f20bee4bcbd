from __future__ import annotations

from typing import Any

import yaml


class AssignmentError(ValueError):
    pass


def _coerce_number(value: Any) -> Any:
    # YAML 1.1 reads exponents without a dot (1e-3) as strings
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            return value
    return value


def parse_assignments(lines: list[str]) -> dict[str, Any]:
    """Parse repeated ``dotted.key=value`` overrides; values are read as YAML scalars."""
    details: dict[str, Any] = {}
    for line in lines:
        if "=" not in line:
            raise AssignmentError(f"override must look like key=value: {line!r}")
        key, raw = line.split("=", 1)
        key = key.strip()
        if not key or any(not part for part in key.split(".")):
            raise AssignmentError(f"override key must be a dotted path: {line!r}")
        try:
            value = yaml.safe_load(raw.strip()) if raw.strip() else None
        except yaml.YAMLError as exc:
            raise AssignmentError(f"override value is not a scalar: {line!r}") from exc
        details[key] = _coerce_number(value)
    return details
