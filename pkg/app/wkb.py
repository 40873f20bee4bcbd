from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.interpolate import CubicHermiteSpline, CubicSpline, PPoly
from scipy.special import digamma, gammaln

from app.potential import EnergyOutOfRange, PotentialSpec, barrier_top, curvature, real_part, slope, turning_points
from app.spectral import ResonantState

logger = logging.getLogger(__name__)

GL_ORDER = 64
TABLE_SAMPLES = 240
TABLE_SPAN = (0.05, 0.95)
DERIVATIVE_STEP = 1e-4
VALIDITY_FRACTION = 0.1

RealPotential = Callable[[np.ndarray], np.ndarray]


@lru_cache(maxsize=8)
def _gauss_legendre(order: int) -> tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(order)


def _panel(func: Callable[[np.ndarray], np.ndarray], lo: float, hi: float, order: int, kind: str) -> float:
    nodes, weights = _gauss_legendre(order)
    if kind == "plain":
        x = 0.5 * (hi - lo) * (nodes + 1.0) + lo
        return float(0.5 * (hi - lo) * np.dot(weights, func(x)))
    # x = lo + u^2 (left end singular) or x = hi - u^2 (right end singular)
    top = math.sqrt(hi - lo)
    u = 0.5 * top * (nodes + 1.0)
    x = lo + u**2 if kind == "left" else hi - u**2
    return float(0.5 * top * np.dot(weights, func(x) * 2.0 * u))


def regularized_integral(
    func: Callable[[np.ndarray], np.ndarray],
    lo: float,
    hi: float,
    breakpoints: tuple[float, ...] = (),
    order: int = GL_ORDER,
) -> float:
    """Integrate over [lo, hi] where both ends may carry square-root zeros or poles."""
    if not hi > lo:
        return 0.0
    inner = sorted(x for x in breakpoints if lo < x < hi)
    if not inner:
        inner = [0.5 * (lo + hi)]
    edges = [lo, *inner, hi]
    total = 0.0
    last = len(edges) - 2
    for index, (start, stop) in enumerate(zip(edges, edges[1:])):
        kind = "left" if index == 0 else "right" if index == last else "plain"
        total += _panel(func, start, stop, order, kind)
    return total


def action_between(
    potential: RealPotential,
    energy: float,
    lo: float,
    hi: float,
    m: float,
    breakpoints: tuple[float, ...] = (),
    order: int = GL_ORDER,
) -> float:
    def kappa(x: np.ndarray) -> np.ndarray:
        return np.sqrt(2.0 * m * np.abs(potential(x) - energy))

    return regularized_integral(kappa, lo, hi, breakpoints, order)


def barrier_time_between(
    potential: RealPotential,
    energy: float,
    lo: float,
    hi: float,
    m: float,
    breakpoints: tuple[float, ...] = (),
    order: int = GL_ORDER,
) -> float:
    def inverse_speed(x: np.ndarray) -> np.ndarray:
        return m / np.sqrt(2.0 * m * np.abs(potential(x) - energy))

    return regularized_integral(inverse_speed, lo, hi, breakpoints, order)


def _breakpoints(spec: PotentialSpec) -> tuple[float, ...]:
    if spec.delta > 0.0:
        return (spec.L - spec.delta, spec.L + spec.delta)
    return (spec.L,)


def _potential(spec: PotentialSpec) -> RealPotential:
    return lambda x: real_part(spec, x)


def action(spec: PotentialSpec, energy: float, order: int = GL_ORDER) -> float:
    points = turning_points(spec, energy)
    return action_between(_potential(spec), energy, points.a, points.b, spec.m, _breakpoints(spec), order)


def classical_period(spec: PotentialSpec, energy: float, order: int = GL_ORDER) -> float:
    points = turning_points(spec, energy)
    half = barrier_time_between(_potential(spec), energy, points.c, points.a, spec.m, _breakpoints(spec), order)
    return 2.0 * half


def barrier_time(spec: PotentialSpec, energy: float, order: int = GL_ORDER) -> float:
    limit = TABLE_SPAN[1] * barrier_top(spec)
    if energy > limit * (1.0 + 1e-12):
        raise EnergyOutOfRange(f"barrier time diverges near the barrier top; E={energy:.6g} > {limit:.6g}")
    points = turning_points(spec, energy)
    return barrier_time_between(_potential(spec), energy, points.a, points.b, spec.m, _breakpoints(spec), order)


def _continue(poly: PPoly, z: complex) -> complex:
    index = int(np.clip(np.searchsorted(poly.x, z.real) - 1, 0, poly.x.shape[0] - 2))
    offset = z - poly.x[index]
    coefficients = poly.c[:, index]
    value = 0j
    for coefficient in coefficients:
        value = value * offset + coefficient
    return complex(value)


@dataclass(eq=False)
class SemiclassicalTable:
    energies: np.ndarray
    actions: np.ndarray
    periods: np.ndarray
    barrier_times: np.ndarray
    mass: float = 1.0
    hbar: float = 1.0
    omega: float = 1.0
    v_b: float = 1.0
    _action: CubicHermiteSpline = field(init=False, repr=False)
    _period: CubicSpline = field(init=False, repr=False)
    _tau: CubicSpline = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.energies = np.asarray(self.energies, dtype=float)
        self.actions = np.asarray(self.actions, dtype=float)
        self.periods = np.asarray(self.periods, dtype=float)
        self.barrier_times = np.asarray(self.barrier_times, dtype=float)
        if self.energies.shape[0] < 4 or np.any(np.diff(self.energies) <= 0):
            raise ValueError("table energies must be increasing with at least 4 samples")
        if np.any(np.diff(self.actions) >= 0):
            raise ValueError("table actions must decrease with energy")
        if np.any(self.periods <= 0) or np.any(self.barrier_times <= 0):
            raise ValueError("table periods and barrier times must be positive")
        self._action = CubicHermiteSpline(self.energies, self.actions, -self.barrier_times)
        self._period = CubicSpline(self.energies, self.periods)
        self._tau = CubicSpline(self.energies, self.barrier_times)

    @property
    def e_min(self) -> float:
        return float(self.energies[0])

    @property
    def e_max(self) -> float:
        return float(self.energies[-1])

    @property
    def span(self) -> float:
        return self.e_max - self.e_min

    def contains(self, energy: float) -> bool:
        return self.e_min <= energy <= self.e_max

    def action(self, energy: float | np.ndarray) -> float | np.ndarray:
        return self._action(energy)

    def period(self, energy: float | np.ndarray) -> float | np.ndarray:
        return self._period(energy)

    def barrier_time(self, energy: float | np.ndarray) -> float | np.ndarray:
        return self._tau(energy)

    def barrier_time_deriv(self, energy: float) -> float:
        step = DERIVATIVE_STEP * self.v_b
        return float((self._tau(energy + step) - self._tau(energy - step)) / (2.0 * step))

    def continued_action(self, energy: complex) -> complex:
        return _continue(self._action, energy)

    def continued_barrier_time(self, energy: complex) -> complex:
        return _continue(self._tau, energy)

    def continued_barrier_time_deriv(self, energy: complex) -> complex:
        step = DERIVATIVE_STEP * self.v_b
        upper = _continue(self._tau, energy + step)
        lower = _continue(self._tau, energy - step)
        return (upper - lower) / (2.0 * step)


def build_table(spec: PotentialSpec, samples: int = TABLE_SAMPLES, order: int = GL_ORDER) -> SemiclassicalTable:
    top = barrier_top(spec)
    energies = np.linspace(TABLE_SPAN[0] * top, TABLE_SPAN[1] * top, samples)
    actions = np.array([action(spec, energy, order) for energy in energies])
    periods = np.array([classical_period(spec, energy, order) for energy in energies])
    taus = np.array([barrier_time(spec, energy, order) for energy in energies])
    logger.info(
        "semiclassical table: %d samples on [%.4g, %.4g], S from %.4g to %.4g",
        samples,
        energies[0],
        energies[-1],
        actions[0],
        actions[-1],
    )
    return SemiclassicalTable(
        energies=energies,
        actions=actions,
        periods=periods,
        barrier_times=taus,
        mass=spec.m,
        hbar=spec.hbar,
        omega=spec.omega,
        v_b=spec.V_b,
    )


def log_g_factor(n: float | np.ndarray) -> float | np.ndarray:
    shifted = np.asarray(n, dtype=float) + 0.5
    return -0.5 * math.log(2.0 * math.pi) + shifted * (1.0 - np.log(shifted)) + gammaln(np.asarray(n, dtype=float) + 1.0)


def g_factor(n: float | np.ndarray) -> float | np.ndarray:
    if np.any(np.asarray(n) < 0):
        raise ValueError("g_factor needs n >= 0")
    value = np.exp(log_g_factor(n))
    return float(value) if np.ndim(value) == 0 else value


def g_log_derivative(n: float) -> float:
    return float(digamma(n + 1.0) - math.log(n + 0.5))


def wkb_width(
    spec: PotentialSpec,
    n: int,
    table: SemiclassicalTable | None = None,
    exact_g: bool = True,
) -> float:
    energy = spec.harmonic_energy(n)
    limit = TABLE_SPAN[1] * barrier_top(spec)
    if energy >= limit:
        raise EnergyOutOfRange(f"level {n} at E={energy:.6g} is above {limit:.6g}")
    if table is not None and table.contains(energy):
        s_n = float(table.action(energy))
        t_n = float(table.period(energy))
    else:
        s_n = action(spec, energy)
        t_n = classical_period(spec, energy)
    g_n = g_factor(n) if exact_g else 1.0
    return math.exp(-2.0 * s_n / spec.hbar) / (g_n * t_n)


def breit_wigner_norm(
    energy: float,
    e_n: float,
    t_n: float,
    s_n: float,
    m: float = 1.0,
    hbar: float = 1.0,
    g_n: float = 1.0,
) -> float:
    theta = math.exp(s_n / hbar)
    period = g_n * t_n
    half_width = hbar / (2.0 * period * theta**2)
    return math.sqrt(m * hbar / (2.0 * math.pi * period**2)) / theta / math.hypot(energy - e_n, half_width)


@dataclass(frozen=True)
class ValidityReport:
    energy: float
    bounds: dict[str, float]
    ok: bool


def validity_report(spec: PotentialSpec, energy: float) -> ValidityReport:
    """Linear-turning-point bound sqrt(m) V'^2 / |V''|^(3/2) at c, a and b."""
    points = turning_points(spec, energy)
    bounds: dict[str, float] = {}
    for name, x in (("c", points.c), ("a", points.a), ("b", points.b)):
        first = float(slope(spec, x))
        second = abs(float(curvature(spec, x)))
        bounds[name] = math.inf if second == 0.0 else math.sqrt(spec.m) * first**2 / second**1.5
    ok = all(spec.hbar <= VALIDITY_FRACTION * bound for bound in bounds.values())
    if not ok:
        logger.warning("linear WKB turning-point condition fails at E=%.4g: %s", energy, bounds)
    return ValidityReport(energy=energy, bounds=bounds, ok=ok)


def wkb_levels(
    spec: PotentialSpec,
    count: int,
    table: SemiclassicalTable | None = None,
    exact_g: bool = True,
) -> list[ResonantState]:
    """Harmonic levels dressed with WKB widths, zero momentum phase and real momentum."""
    levels: list[ResonantState] = []
    for n in range(count):
        energy = spec.harmonic_energy(n)
        gamma = wkb_width(spec, n, table, exact_g)
        k_abs = math.sqrt(2.0 * spec.m * energy)
        levels.append(
            ResonantState(
                n=n,
                eps=complex(energy, -0.5 * spec.hbar * gamma),
                E=energy,
                Gamma=gamma,
                psi=None,
                A=math.sqrt(spec.m * gamma / k_abs),
                k_abs=k_abs,
                delta=0.0,
                width_source="wkb",
            )
        )
    return levels
