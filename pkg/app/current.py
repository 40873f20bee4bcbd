from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid

from app.decomposition import random_phase_state
from app.errors import SimulationError
from app.spectral import ResonantState

logger = logging.getLogger(__name__)

PROVENANCES = {"formula", "evolution", "saddle"}
TIME_CHUNK = 512
CHARACTERISTIC_WEIGHT = 1e-3


class IndexMismatch(SimulationError):
    pass


class SeriesError(SimulationError):
    pass


@dataclass(eq=False)
class CurrentSeries:
    times: np.ndarray
    j: np.ndarray
    provenance: str
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=float)
        self.j = np.asarray(self.j, dtype=float)
        if self.provenance not in PROVENANCES:
            raise SeriesError(f"provenance must be one of {sorted(PROVENANCES)}")
        if self.times.ndim != 1 or self.times.shape != self.j.shape:
            raise SeriesError("times and j must be 1-D arrays of equal length")
        if self.times.shape[0] > 1 and np.any(np.diff(self.times) <= 0):
            raise SeriesError("times must be strictly increasing")
        if not np.all(np.isfinite(self.j)):
            raise SeriesError("current samples must be finite")

    @property
    def window(self) -> tuple[float, float] | None:
        return self.metadata.get("window")

    def in_window(self) -> np.ndarray:
        if self.window is None:
            return np.ones(self.times.shape, dtype=bool)
        lo, hi = self.window
        return (self.times >= lo) & (self.times <= hi)


def _check_indexing(states: Sequence[ResonantState], c: np.ndarray) -> np.ndarray:
    c = np.asarray(c, dtype=complex)
    if c.ndim != 1 or c.shape[0] != len(states):
        raise IndexMismatch(f"{c.shape[0] if c.ndim == 1 else c.shape} coefficients for {len(states)} states")
    for index, state in enumerate(states):
        if state.n != index:
            raise IndexMismatch(f"state at position {index} carries level index {state.n}")
    return c


def formula_current(
    states: Sequence[ResonantState],
    c: np.ndarray,
    times: np.ndarray,
    hbar: float = 1.0,
    metadata: dict[str, Any] | None = None,
) -> CurrentSeries:
    c = _check_indexing(states, c)
    times = np.asarray(times, dtype=float)
    magnitude = np.abs(c)
    theta = np.angle(c)
    energy = np.array([state.E for state in states])
    gamma = np.array([state.Gamma for state in states])
    k_abs = np.array([state.k_abs for state in states])
    delta = np.array([state.delta for state in states])
    re_k = k_abs * np.cos(delta)

    # rows carry n, columns carry n'
    amplitude = (
        magnitude[:, None]
        * magnitude[None, :]
        * k_abs[None, :]
        * np.sqrt(gamma[:, None] * gamma[None, :] / (re_k[:, None] * re_k[None, :]))
    )
    np.fill_diagonal(amplitude, 0.0)
    frequency = (energy[:, None] - energy[None, :]) / hbar
    phase = theta[None, :] - theta[:, None] + delta[None, :]
    decay = 0.5 * (gamma[:, None] + gamma[None, :])

    j = np.empty(times.shape[0])
    for start in range(0, times.shape[0], TIME_CHUNK):
        chunk = times[start : start + TIME_CHUNK, None, None]
        diagonal = np.sum(magnitude**2 * gamma * np.exp(-gamma * chunk[:, :, 0]), axis=1)
        cross = np.sum(amplitude * np.cos(frequency * chunk + phase) * np.exp(-decay * chunk), axis=(1, 2))
        j[start : start + TIME_CHUNK] = diagonal + cross

    info = {"basis_size": len(states)}
    info.update(metadata or {})
    return CurrentSeries(times=times, j=j, provenance="formula", metadata=info)


def average_rate(states: Sequence[ResonantState], c: np.ndarray) -> float:
    c = _check_indexing(states, c)
    return float(np.sum(np.abs(c) ** 2 * np.array([state.Gamma for state in states])))


def per_cycle_leak(gamma_bar: float, omega: float) -> float:
    if gamma_bar < 0 or omega <= 0:
        raise ValueError("per-cycle leak needs gamma_bar >= 0 and omega > 0")
    return 2.0 * math.pi * gamma_bar / omega


def survival_from_current(series: CurrentSeries, p0: float = 1.0) -> np.ndarray:
    span = series.times[-1] - series.times[0] if series.times.shape[0] > 1 else 1.0
    if abs(series.times[0]) > 1e-12 * max(span, 1.0):
        raise SeriesError(f"survival integration must start at t=0 (series starts at {series.times[0]:.6g})")
    return p0 - cumulative_trapezoid(series.j, series.times, initial=0.0)


def integrate_window(series: CurrentSeries, t0: float, t1: float) -> float:
    """Trapezoid integral of j over [t0, t1] with linearly interpolated end points."""
    if t0 < series.times[0] or t1 > series.times[-1] or not t1 > t0:
        raise SeriesError(f"window [{t0:.6g}, {t1:.6g}] not inside the series")
    inside = (series.times > t0) & (series.times < t1)
    ts = np.concatenate([[t0], series.times[inside], [t1]])
    js = np.concatenate([[np.interp(t0, series.times, series.j)], series.j[inside], [np.interp(t1, series.times, series.j)]])
    return float(trapezoid(js, ts))


def applicability_window(
    states: Sequence[ResonantState],
    c: np.ndarray,
    omega: float,
    hbar: float = 1.0,
    actions: Sequence[float] | None = None,
) -> tuple[float, float]:
    """Interval after the early transient and before the late-time tail."""
    gamma_bar = average_rate(states, c)
    upper = 5.0 / gamma_bar if gamma_bar > 0 else math.inf
    if actions is not None and len(actions):
        upper = min(upper, 8.0 * max(actions) / (hbar * states[0].Gamma))
    return 2.0 * math.pi / omega, upper


def annotate_window(series: CurrentSeries, window: tuple[float, float]) -> CurrentSeries:
    series.metadata["window"] = window
    outside = int(np.count_nonzero(~series.in_window()))
    if outside:
        logger.warning(
            "%d of %d %s samples fall outside the applicability window [%.4g, %.4g]",
            outside,
            series.times.shape[0],
            series.provenance,
            window[0],
            window[1],
        )
    return series


def ensemble_current(
    states: Sequence[ResonantState],
    magnitudes: np.ndarray,
    times: np.ndarray,
    draws: int,
    seed: int,
    hbar: float = 1.0,
) -> CurrentSeries:
    """Average of formula_current over seeded random-phase draws."""
    total = np.zeros(np.asarray(times).shape[0])
    for draw in range(draws):
        coefficients = random_phase_state(magnitudes, seed + draw)
        total += formula_current(states, coefficients, times, hbar).j
    return CurrentSeries(
        times=times,
        j=total / draws,
        provenance="formula",
        metadata={"basis_size": len(states), "draws": draws, "seed": seed},
    )


def characteristic_energy(states: Sequence[ResonantState], c: np.ndarray) -> float:
    """Highest level energy that carries a non-negligible share of the leak rate."""
    c = _check_indexing(states, c)
    weights = np.abs(c) ** 2 * np.array([state.Gamma for state in states])
    significant = np.flatnonzero(weights >= CHARACTERISTIC_WEIGHT * np.max(weights))
    return float(max(states[index].E for index in significant))
