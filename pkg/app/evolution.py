from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Iterator

import numpy as np
from scipy.linalg import solve_banded
from scipy.optimize import curve_fit

from app.current import CurrentSeries, integrate_window
from app.discretization import HARD_WALL, Grid, HamiltonianMatrix, current_at, normalize_boundary, prob_in_well
from app.errors import SimulationError
from app.potential import EnergyOutOfRange, PotentialSpec, RootNotBracketed, turning_points

logger = logging.getLogger(__name__)

DEFAULT_STEPS_PER_PERIOD = 1000
MAX_DT_OMEGA = 0.05
NORM_GROWTH_LIMIT = 1e-6
COMPARISON_FRACTION = 0.8


class StepUnstable(SimulationError):
    pass


class NoOverlap(SimulationError):
    pass


@dataclass(frozen=True)
class EvolutionConfig:
    dt: float
    T: float
    record_stride: int = 10
    boundary: str = "cap"
    snapshot_stride: int = 0

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ValueError("evolution.dt must be > 0")
        if not self.T > 0:
            raise ValueError("evolution.T must be > 0")
        if self.record_stride < 1:
            raise ValueError("evolution.record_stride must be >= 1")
        if self.snapshot_stride < 0:
            raise ValueError("evolution.snapshot_stride must be >= 0")
        object.__setattr__(self, "boundary", normalize_boundary(self.boundary))

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))

    @classmethod
    def for_spec(cls, spec: PotentialSpec, periods: float = 10.0, boundary: str = "cap") -> EvolutionConfig:
        return cls(dt=spec.period / DEFAULT_STEPS_PER_PERIOD, T=periods * spec.period, boundary=boundary)


def check_against_spec(cfg: EvolutionConfig, spec: PotentialSpec) -> None:
    if cfg.dt > MAX_DT_OMEGA / spec.omega:
        raise ValueError(f"evolution.dt must be <= 0.05/omega = {MAX_DT_OMEGA / spec.omega:.6g}")
    if cfg.T < spec.period:
        raise ValueError(f"evolution.T must cover at least one period ({spec.period:.6g})")


class CrankNicolsonPropagator:
    """One Crank-Nicolson step: (1 + i dt H / 2hbar) psi' = (1 - i dt H / 2hbar) psi."""

    def __init__(self, hamiltonian: HamiltonianMatrix, dt: float) -> None:
        self.hamiltonian = hamiltonian
        self.dt = dt
        self._factor = 1j * dt / (2.0 * hamiltonian.hbar)
        self._banded = hamiltonian.to_banded(scale=self._factor, shift=1.0)

    def step(self, psi: np.ndarray) -> np.ndarray:
        rhs = psi - self._factor * self.hamiltonian.matvec(psi)
        return solve_banded((1, 1), self._banded, rhs, check_finite=False)


@dataclass(frozen=True, eq=False)
class EvolutionSample:
    t: float
    P: float
    j: float
    norm: float
    snapshot: np.ndarray | None = None


def _norm(psi: np.ndarray, grid: Grid) -> float:
    return float(np.vdot(psi, psi).real * grid.h)


def evolve(
    hamiltonian: HamiltonianMatrix,
    psi0: np.ndarray,
    cfg: EvolutionConfig,
    x_t: float,
) -> Iterator[EvolutionSample]:
    if cfg.boundary != hamiltonian.boundary:
        raise ValueError(f"evolution boundary {cfg.boundary} does not match Hamiltonian {hamiltonian.boundary}")
    grid = hamiltonian.grid
    if psi0.shape != (grid.N,):
        raise ValueError(f"initial state must have shape ({grid.N},)")
    propagator = CrankNicolsonPropagator(hamiltonian, cfg.dt)
    check_growth = hamiltonian.boundary == HARD_WALL
    mass, hbar = hamiltonian.mass, hamiltonian.hbar
    steps = cfg.steps
    progress = max(steps // 10, 1)

    def sample(step: int, psi: np.ndarray, norm: float) -> EvolutionSample:
        snapshot = None
        if cfg.snapshot_stride and step % cfg.snapshot_stride == 0:
            snapshot = psi.copy()
        return EvolutionSample(
            t=step * cfg.dt,
            P=prob_in_well(psi, grid, x_t),
            j=current_at(psi, grid, x_t, mass, hbar),
            norm=norm,
            snapshot=snapshot,
        )

    psi = np.array(psi0, dtype=complex)
    norm = _norm(psi, grid)
    yield sample(0, psi, norm)
    for step in range(1, steps + 1):
        psi = propagator.step(psi)
        updated = _norm(psi, grid)
        if check_growth and updated - norm > NORM_GROWTH_LIMIT * norm:
            raise StepUnstable(f"norm grew from {norm:.12g} to {updated:.12g} at step {step}")
        norm = updated
        if step % cfg.record_stride == 0:
            yield sample(step, psi, norm)
        if step % progress == 0:
            logger.info("evolution %s: step %d/%d t=%.4g norm=%.10f", cfg.boundary, step, steps, step * cfg.dt, norm)


@dataclass(eq=False)
class EvolutionRecord:
    times: np.ndarray
    P: np.ndarray
    j: np.ndarray
    norm: np.ndarray
    snapshots: list[tuple[float, np.ndarray]] = field(default_factory=list)

    def current_series(self, **metadata: object) -> CurrentSeries:
        return CurrentSeries(times=self.times, j=self.j, provenance="evolution", metadata=dict(metadata))


def run_evolution(
    hamiltonian: HamiltonianMatrix,
    psi0: np.ndarray,
    cfg: EvolutionConfig,
    x_t: float,
) -> EvolutionRecord:
    times, probabilities, currents, norms = [], [], [], []
    snapshots: list[tuple[float, np.ndarray]] = []
    for item in evolve(hamiltonian, psi0, cfg, x_t):
        times.append(item.t)
        probabilities.append(item.P)
        currents.append(item.j)
        norms.append(item.norm)
        if item.snapshot is not None:
            snapshots.append((item.t, item.snapshot))
    return EvolutionRecord(
        times=np.array(times),
        P=np.array(probabilities),
        j=np.array(currents),
        norm=np.array(norms),
        snapshots=snapshots,
    )


@dataclass(frozen=True)
class ResidualReport:
    max_abs: float
    rms: float
    normalized_max: float
    normalized_rms: float
    peak: float
    window: tuple[float, float]
    samples: int

    def to_dict(self) -> dict[str, object]:
        return asdict(self)


def compare(a: CurrentSeries, b: CurrentSeries, window: tuple[float, float] | None = None) -> ResidualReport:
    lo = max(a.times[0], b.times[0])
    hi = min(a.times[-1], b.times[-1])
    if window is not None:
        lo, hi = max(lo, window[0]), min(hi, window[1])
    mask = (a.times >= lo) & (a.times <= hi)
    if hi < lo or not np.any(mask):
        raise NoOverlap(f"series share no samples in [{lo:.6g}, {hi:.6g}]")
    ts = a.times[mask]
    reference = a.j[mask]
    other = np.interp(ts, b.times, b.j)
    difference = np.abs(reference - other)
    peak = float(max(np.max(np.abs(reference)), np.max(np.abs(other))))
    max_abs = float(np.max(difference))
    rms = float(math.sqrt(np.mean(difference**2)))
    scale = peak if peak > 0 else 1.0
    return ResidualReport(
        max_abs=max_abs,
        rms=rms,
        normalized_max=max_abs / scale,
        normalized_rms=rms / scale,
        peak=peak,
        window=(float(ts[0]), float(ts[-1])),
        samples=int(ts.shape[0]),
    )


def reflection_time(spec: PotentialSpec, grid: Grid, e_char: float) -> float:
    if e_char <= 0:
        raise ValueError("characteristic energy must be > 0")
    try:
        exit_point = turning_points(spec, e_char).b
    except (EnergyOutOfRange, RootNotBracketed):
        exit_point = spec.L + spec.w
    speed = math.sqrt(2.0 * e_char / spec.m)
    return 2.0 * (grid.x_max - exit_point) / speed


def comparison_cutoff(spec: PotentialSpec, grid: Grid, e_char: float) -> float:
    return COMPARISON_FRACTION * reflection_time(spec, grid, e_char)


@dataclass(frozen=True)
class BurstFit:
    peak: float
    centre: float
    width: float


def _gaussian(t: np.ndarray, peak: float, centre: float, width: float) -> np.ndarray:
    return peak * np.exp(-(((t - centre) / width) ** 2))


def fit_gaussian_burst(series: CurrentSeries, centre: float, half_window: float) -> BurstFit:
    """Fit peak * exp(-((t - centre) / width)^2) to the samples around one burst."""
    mask = np.abs(series.times - centre) <= half_window
    if np.count_nonzero(mask) < 5:
        raise NoOverlap(f"too few samples around t={centre:.6g} to fit a burst")
    ts = series.times[mask]
    js = series.j[mask]
    top = int(np.argmax(js))
    guess = (float(js[top]), float(ts[top]), 0.5 * half_window)
    params, _ = curve_fit(_gaussian, ts, js, p0=guess, maxfev=10_000)
    return BurstFit(peak=float(params[0]), centre=float(params[1]), width=abs(float(params[2])))


def burst_centres(series: CurrentSeries, first_centre: float, period: float, cycles: int) -> list[float]:
    centres = []
    for k in range(cycles):
        guess = first_centre + k * period
        mask = np.abs(series.times - guess) <= 0.5 * period
        if not np.any(mask):
            break
        centres.append(float(series.times[mask][np.argmax(series.j[mask])]))
    return centres


def cycle_integrals(series: CurrentSeries, centres: list[float], period: float) -> list[float]:
    return [integrate_window(series, c - 0.5 * period, c + 0.5 * period) for c in centres]


def burst_fractions(series: CurrentSeries, centres: list[float], period: float, width: float) -> list[float]:
    """Share of each cycle's leak that happens within 3 burst widths of the burst centre."""
    fractions = []
    for centre in centres:
        total = integrate_window(series, centre - 0.5 * period, centre + 0.5 * period)
        core = integrate_window(series, centre - 3.0 * width, centre + 3.0 * width)
        fractions.append(core / total if total > 0 else 0.0)
    return fractions


def count_resolved_steps(
    series: CurrentSeries,
    first_centre: float,
    period: float,
    cycles: int,
    threshold: float = 0.75,
) -> int:
    """Cycles whose leak is concentrated within a sixth of a period around the burst."""
    centres = [c for c in burst_centres(series, first_centre, period, cycles) if c + 0.5 * period <= series.times[-1]]
    centres = [c for c in centres if c - 0.5 * period >= series.times[0]]
    fractions = burst_fractions(series, centres, period, period / 18.0)
    return sum(fraction >= threshold for fraction in fractions)
