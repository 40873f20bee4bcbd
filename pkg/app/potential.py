from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import brentq

from app.errors import SimulationError

logger = logging.getLogger(__name__)

ROOT_XTOL = 1e-12
CONTINUITY_RTOL = 1e-9


class EnergyOutOfRange(SimulationError):
    pass


class RootNotBracketed(SimulationError):
    pass


@dataclass(frozen=True)
class PotentialSpec:
    """Harmonic well, linear barrier ramp, free region and quadratic absorbing tail.

    Defaults are the study parameters (m = hbar = omega = 1, L = 6, w = 0.9).
    """

    m: float = 1.0
    omega: float = 1.0
    L: float = 6.0
    V_b: float = 18.0
    w: float = 0.9
    x_cap: float = 56.9
    eta: float = 3e-4
    delta: float = 0.3
    hbar: float = 1.0
    allow_discontinuous: bool = False

    def __post_init__(self) -> None:
        if self.m <= 0:
            raise ValueError("m must be > 0")
        if self.omega <= 0:
            raise ValueError("omega must be > 0")
        if self.hbar <= 0:
            raise ValueError("hbar must be > 0")
        if self.w <= 0:
            raise ValueError("w must be > 0")
        if self.V_b <= 0:
            raise ValueError("V_b must be > 0")
        if self.eta < 0:
            raise ValueError("eta must be >= 0")
        if self.delta < 0:
            raise ValueError("delta must be >= 0")
        if self.delta >= self.w:
            raise ValueError("delta must be < w")
        if self.L <= self.delta:
            raise ValueError("L must be > delta")
        if self.x_cap < self.L + self.w:
            raise ValueError("x_cap must be >= L + w")
        if not self.allow_discontinuous:
            junction = 0.5 * self.m * self.omega**2 * self.L**2
            if abs(junction - self.V_b) > CONTINUITY_RTOL * self.V_b:
                raise ValueError(
                    f"V_b must equal m*omega^2*L^2/2 = {junction:.12g} for a continuous junction"
                )

    @property
    def oscillator_length(self) -> float:
        return math.sqrt(self.hbar / (self.m * self.omega))

    @property
    def period(self) -> float:
        return 2.0 * math.pi / self.omega

    @property
    def default_x_t(self) -> float:
        return self.L + self.w + 1.0

    def harmonic_energy(self, n: float) -> float:
        return self.hbar * self.omega * (n + 0.5)


@dataclass(frozen=True)
class TurningPoints:
    c: float
    a: float
    b: float
    energy: float


def study_spec(**overrides: float) -> PotentialSpec:
    return replace(PotentialSpec(), **overrides)


def _harmonic(spec: PotentialSpec, x: np.ndarray) -> np.ndarray:
    return 0.5 * spec.m * spec.omega**2 * x**2


def _ramp(spec: PotentialSpec, x: np.ndarray) -> np.ndarray:
    return spec.V_b * (1.0 - (x - spec.L) / spec.w)


@lru_cache(maxsize=64)
def _junction_blend(spec: PotentialSpec) -> CubicHermiteSpline:
    left = spec.L - spec.delta
    right = spec.L + spec.delta
    values = [0.5 * spec.m * spec.omega**2 * left**2, spec.V_b * (1.0 - spec.delta / spec.w)]
    slopes = [spec.m * spec.omega**2 * left, -spec.V_b / spec.w]
    return CubicHermiteSpline([left, right], values, slopes)


def real_part(spec: PotentialSpec, x: np.ndarray | float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    left = spec.L - spec.delta
    right = spec.L + spec.delta
    values = np.where(x <= left, _harmonic(spec, x), 0.0)
    ramp = (x >= right) & (x <= spec.L + spec.w)
    if spec.delta == 0.0:
        ramp = (x > spec.L) & (x <= spec.L + spec.w)
    values = np.where(ramp, _ramp(spec, x), values)
    if spec.delta > 0.0:
        blend = (x > left) & (x < right)
        if np.any(blend):
            values = np.where(blend, _junction_blend(spec)(np.clip(x, left, right)), values)
    return values


def imag_part(spec: PotentialSpec, x: np.ndarray | float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    beyond = np.clip(x - spec.x_cap, 0.0, None)
    return -spec.eta * beyond**2


def evaluate(spec: PotentialSpec, x: np.ndarray | float) -> np.ndarray:
    return real_part(spec, x) + 1j * imag_part(spec, x)


def slope(spec: PotentialSpec, x: np.ndarray | float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    left = spec.L - spec.delta
    right = spec.L + spec.delta
    values = np.where(x <= left, spec.m * spec.omega**2 * x, 0.0)
    ramp = (x >= right) & (x <= spec.L + spec.w) if spec.delta > 0.0 else (x > spec.L) & (x <= spec.L + spec.w)
    values = np.where(ramp, -spec.V_b / spec.w, values)
    if spec.delta > 0.0:
        blend = (x > left) & (x < right)
        values = np.where(blend, _junction_blend(spec).derivative()(np.clip(x, left, right)), values)
    return values


def curvature(spec: PotentialSpec, x: np.ndarray | float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    left = spec.L - spec.delta
    right = spec.L + spec.delta
    values = np.where(x <= left, spec.m * spec.omega**2, 0.0)
    if spec.delta > 0.0:
        blend = (x > left) & (x < right)
        values = np.where(blend, _junction_blend(spec).derivative(2)(np.clip(x, left, right)), values)
    return values


@lru_cache(maxsize=64)
def barrier_peak(spec: PotentialSpec) -> tuple[float, float]:
    """Location and height of the real barrier maximum, accounting for smoothing."""
    if spec.delta == 0.0:
        harmonic_edge = 0.5 * spec.m * spec.omega**2 * spec.L**2
        return spec.L, max(harmonic_edge, spec.V_b)
    left = spec.L - spec.delta
    right = spec.L + spec.delta
    blend = _junction_blend(spec)
    candidates = [left, right]
    candidates.extend(float(root) for root in blend.derivative().roots(extrapolate=False))
    heights = [float(blend(x)) for x in candidates]
    best = int(np.argmax(heights))
    return candidates[best], heights[best]


def barrier_top(spec: PotentialSpec) -> float:
    return barrier_peak(spec)[1]


def _scan_step(spec: PotentialSpec) -> float:
    if spec.delta > 0.0:
        return min(spec.delta, spec.w) / 8.0
    return spec.w / 8.0


def _refine(spec: PotentialSpec, energy: float, lo: float, hi: float) -> float:
    def offset(x: float) -> float:
        return float(real_part(spec, x)) - energy

    return float(brentq(offset, lo, hi, xtol=ROOT_XTOL))


def turning_points(spec: PotentialSpec, energy: float) -> TurningPoints:
    if not 0.0 < energy < spec.V_b:
        raise EnergyOutOfRange(f"energy {energy:.6g} outside (0, V_b={spec.V_b:.6g})")
    x_top, top = barrier_peak(spec)
    if energy >= top:
        raise RootNotBracketed(f"energy {energy:.6g} is at or above the smoothed barrier top {top:.6g}")

    reach = math.sqrt(2.0 * energy / (spec.m * spec.omega**2))
    c = _refine(spec, energy, -2.0 * reach, 0.0)

    step = _scan_step(spec)
    edges = np.arange(0.0, spec.L + spec.w, step)
    marks = [spec.L - spec.delta, spec.L, spec.L + spec.delta, x_top, spec.L + spec.w]
    xs = np.unique(np.concatenate([edges, marks]))
    signs = np.sign(real_part(spec, xs) - energy)
    rises = [i for i in range(len(xs) - 1) if signs[i] < 0 and signs[i + 1] >= 0]
    falls = [i for i in range(len(xs) - 1) if signs[i] >= 0 and signs[i + 1] < 0]
    if len(rises) != 1 or len(falls) != 1 or falls[0] < rises[0]:
        raise RootNotBracketed(
            f"expected one well exit and one barrier exit at E={energy:.6g}, found {len(rises)} and {len(falls)}"
        )
    a = _refine(spec, energy, float(xs[rises[0]]), float(xs[rises[0] + 1]))
    b = _refine(spec, energy, float(xs[falls[0]]), float(xs[falls[0] + 1]))
    if not c < a < b:
        raise RootNotBracketed(f"turning points out of order at E={energy:.6g}: c={c}, a={a}, b={b}")
    return TurningPoints(c=c, a=a, b=b, energy=energy)
