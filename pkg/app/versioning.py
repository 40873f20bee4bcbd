from __future__ import annotations

import platform
from pathlib import Path

import numpy
import scipy
import yaml

PROJECT_ROOT = Path(__file__).resolve().parent.parent
VERSION_FILE = PROJECT_ROOT / "VERSION"
DEFAULT_VERSION = "0.0.0"


def get_app_version() -> str:
    try:
        value = VERSION_FILE.read_text(encoding="utf-8").strip()
    except OSError:
        return DEFAULT_VERSION
    return value or DEFAULT_VERSION


def get_library_versions() -> dict[str, str]:
    return {
        "decay_lab": get_app_version(),
        "python": platform.python_version(),
        "numpy": numpy.__version__,
        "scipy": scipy.__version__,
        "pyyaml": yaml.__version__,
    }
