from __future__ import annotations


class SimulationError(RuntimeError):
    """Base class for numerical failures; the CLI maps it to exit status 3."""
