from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import brentq, newton

from app.current import CurrentSeries
from app.errors import SimulationError
from app.potential import PotentialSpec
from app.wkb import SemiclassicalTable, g_factor, g_log_derivative

logger = logging.getLogger(__name__)

DAMPING = 0.5
STEP_RTOL = 1e-12
RELATION_RTOL = 1e-10
MAX_ITERATIONS = 10_000
STALL_WINDOW = 25
TRUST_FRACTION = 0.2
EXPANSION_LIMIT = 0.5


class SaddleDiverged(SimulationError):
    pass


class NoConvergence(SimulationError):
    pass


class ContinuationOutOfRange(SimulationError):
    pass


@dataclass(frozen=True)
class SaddleResult:
    alpha: complex
    omega: float
    hbar: float
    n0: float
    tau0: float
    tau0_prime: float
    n1: complex
    f0: complex
    f0_pp: float
    dt_width: float
    dP: float
    j_peak: float
    S0: float
    iterations: int
    method: str
    exact_g: bool = False

    @property
    def t_offset(self) -> float:
        return float(np.angle(self.alpha)) / self.omega

    @property
    def narrow(self) -> bool:
        return self.omega * self.dt_width < EXPANSION_LIMIT

    @property
    def energy(self) -> float:
        return self.hbar * self.omega * (self.n0 + 0.5)

    def summary(self) -> dict[str, float | str | bool]:
        return {
            "alpha_abs": abs(self.alpha),
            "alpha_phase": float(np.angle(self.alpha)),
            "n0": self.n0,
            "E0": self.energy,
            "tau0": self.tau0,
            "tau0_prime": self.tau0_prime,
            "n1_real": self.n1.real,
            "n1_imag": self.n1.imag,
            "f0_real": self.f0.real,
            "f0_imag": self.f0.imag,
            "f0_pp": self.f0_pp,
            "dt_width": self.dt_width,
            "dP": self.dP,
            "j_peak": self.j_peak,
            "t_offset": self.t_offset,
            "narrow": self.narrow,
            "iterations": self.iterations,
            "method": self.method,
            "exact_g": self.exact_g,
        }


def _level_range(table: SemiclassicalTable) -> tuple[float, float]:
    quantum = table.hbar * table.omega
    lo = max(table.e_min / quantum - 0.5, 1e-9)
    hi = table.e_max / quantum - 0.5
    if not hi > lo:
        raise SaddleDiverged("semiclassical table does not cover any positive level index")
    return lo, hi


def _relation(table: SemiclassicalTable, log_a2: float, exact_g: bool) -> Callable[[float], float]:
    quantum = table.hbar * table.omega

    def target(u: float) -> float:
        n = math.exp(u)
        value = log_a2 + 2.0 * table.omega * float(table.barrier_time(quantum * (n + 0.5)))
        if exact_g:
            value -= g_log_derivative(n)
        return value

    return target


def _fixed_point(target: Callable[[float], float], u: float, lo: float, hi: float) -> tuple[float | None, int, str]:
    steps: list[float] = []
    for iteration in range(1, MAX_ITERATIONS + 1):
        u_next = (1.0 - DAMPING) * u + DAMPING * target(u)
        if not math.log(lo) <= u_next <= math.log(hi):
            return None, iteration, "range"
        step = abs(math.expm1(u - u_next))
        u = u_next
        if step < STEP_RTOL:
            return u, iteration, "converged"
        steps.append(step)
        if iteration > 2 * STALL_WINDOW and step >= 0.999 * steps[-STALL_WINDOW]:
            return None, iteration, "stalled"
    return None, MAX_ITERATIONS, "exhausted"


def solve_saddle(
    alpha: complex,
    spec: PotentialSpec,
    table: SemiclassicalTable,
    exact_g: bool = False,
) -> SaddleResult:
    modulus = abs(alpha)
    if modulus <= 0.0:
        raise ValueError("saddle solve needs |alpha| > 0")
    lo, hi = _level_range(table)
    target = _relation(table, 2.0 * math.log(modulus), exact_g)
    start = math.log(min(max(modulus**2, lo), hi))

    u, iterations, status = _fixed_point(target, start, lo, hi)
    method = "fixed_point"
    if u is None:
        logger.info("damped fixed point %s after %d iterations; falling back to bracketed root", status, iterations)

        def residual(value: float) -> float:
            return value - target(value)

        left, right = math.log(lo), math.log(hi)
        if residual(left) * residual(right) > 0:
            if status == "exhausted":
                raise NoConvergence(f"saddle iteration did not converge in {MAX_ITERATIONS} iterations")
            raise SaddleDiverged(
                f"no saddle for |alpha|={modulus:.4g} inside the table (levels {lo:.3g}..{hi:.3g}); "
                "E(n0) approaches the barrier top"
            )
        u = float(brentq(residual, left, right, xtol=1e-14, rtol=4.0 * np.finfo(float).eps))
        method = "bracketed"

    n0 = math.exp(u)
    relation_error = abs(math.expm1(target(u) - u))
    if relation_error > RELATION_RTOL:
        raise NoConvergence(f"saddle relation residual {relation_error:.3e} exceeds {RELATION_RTOL:.0e}")

    quantum = spec.hbar * spec.omega
    energy = quantum * (n0 + 0.5)
    tau0 = float(table.barrier_time(energy))
    tau0_prime = quantum * table.barrier_time_deriv(energy)
    action0 = float(table.action(energy))
    omega = spec.omega
    n1 = 2j * omega / (1.0 - 2.0 * omega * n0 * tau0_prime)
    second_action = -quantum * tau0_prime
    f0_pp = -second_action / spec.hbar - 1.0 / (2.0 * n0)
    if not f0_pp < 0.0:
        raise SaddleDiverged(
            f"stationary point n0={n0:.6g} is not a maximum of the exponent (f0''={f0_pp:.3e}); "
            "barrier time grows too fast with energy"
        )
    f0 = complex((0.5 - omega * tau0) * n0 - action0 / spec.hbar)
    curvature = -f0_pp
    n1_abs = abs(n1)
    dt_width = 1.0 / (math.sqrt(curvature) * n0 * n1_abs)
    envelope = math.exp(-(modulus**2) + 2.0 * f0.real)
    dP = envelope * omega / math.sqrt(2.0 * curvature**3 * n0**3 * n1_abs**2)
    j_peak = envelope * omega / (curvature * math.sqrt(2.0 * math.pi * n0))
    if exact_g:
        g0 = float(g_factor(n0))
        dP /= g0
        j_peak /= g0

    result = SaddleResult(
        alpha=complex(alpha),
        omega=omega,
        hbar=spec.hbar,
        n0=n0,
        tau0=tau0,
        tau0_prime=tau0_prime,
        n1=n1,
        f0=f0,
        f0_pp=f0_pp,
        dt_width=dt_width,
        dP=dP,
        j_peak=j_peak,
        S0=action0,
        iterations=iterations,
        method=method,
        exact_g=exact_g,
    )
    if not result.narrow:
        logger.warning("burst width omega*dt=%.3g is not small; Gaussian burst form is unreliable", omega * dt_width)
    logger.info("saddle n0=%.6g (E=%.6g) via %s, dt=%.4g, dP=%.4e", n0, energy, method, dt_width, dP)
    return result


def burst_current(result: SaddleResult, t: float | np.ndarray) -> float | np.ndarray:
    shifted = np.asarray(t, dtype=float) - result.t_offset
    if np.any(np.abs(result.omega * shifted) > EXPANSION_LIMIT):
        logger.debug("burst current evaluated beyond |omega t| <= %.1f", EXPANSION_LIMIT)
    exponent = result.f0_pp * (result.n0 * abs(result.n1)) ** 2 * shifted**2
    value = result.j_peak * np.exp(exponent)
    return float(value) if np.ndim(value) == 0 else value


def burst_series(result: SaddleResult, times: np.ndarray) -> CurrentSeries:
    times = np.asarray(times, dtype=float)
    outside = int(np.count_nonzero(np.abs(result.omega * (times - result.t_offset)) > EXPANSION_LIMIT))
    return CurrentSeries(
        times=times,
        j=np.asarray(burst_current(result, times)),
        provenance="saddle",
        metadata={"t_offset": result.t_offset, "outside_expansion": outside, "alpha": abs(result.alpha)},
    )


def full_saddle_current(
    alpha: complex,
    spec: PotentialSpec,
    table: SemiclassicalTable,
    t: float,
    start: SaddleResult | None = None,
) -> float:
    real_saddle = start if start is not None else solve_saddle(alpha, spec, table)
    modulus = abs(alpha)
    omega = spec.omega
    quantum = spec.hbar * omega
    shifted = t - real_saddle.t_offset
    trust = TRUST_FRACTION * table.span

    def continued_energy(u: complex) -> complex:
        energy = quantum * (np.exp(u) + 0.5)
        if abs(energy.imag) > trust or not table.e_min <= energy.real <= table.e_max:
            raise ContinuationOutOfRange(
                f"complex saddle energy {energy:.4g} leaves the trust region (|Im E| <= {trust:.4g})"
            )
        return energy

    def relation(u: complex) -> complex:
        energy = continued_energy(u)
        return u - 2.0 * math.log(modulus) - 2.0 * omega * table.continued_barrier_time(energy) - 2j * omega * shifted

    def relation_prime(u: complex) -> complex:
        energy = continued_energy(u)
        return 1.0 - 2.0 * omega * quantum * np.exp(u) * table.continued_barrier_time_deriv(energy)

    guess = math.log(real_saddle.n0) + np.log(1.0 + real_saddle.n1 * shifted)
    try:
        u = complex(newton(relation, guess, fprime=relation_prime, tol=1e-14, maxiter=100))
    except SimulationError:
        raise
    except RuntimeError as exc:
        raise NoConvergence(f"complex saddle did not converge at t={t:.6g}: {exc}") from exc

    n_star = complex(np.exp(u))
    energy = continued_energy(u)
    action = table.continued_action(energy)
    tau_prime = quantum * table.continued_barrier_time_deriv(energy)
    exponent = (
        -0.5 * n_star * np.log(n_star)
        + 0.5 * n_star
        + n_star * math.log(modulus)
        - action / spec.hbar
        + 1j * omega * n_star * shifted
    )
    f_pp = omega * tau_prime - 1.0 / (2.0 * n_star)
    return float(
        math.exp(-(modulus**2) + 2.0 * exponent.real) * omega / (abs(f_pp) * math.sqrt(2.0 * math.pi * abs(n_star)))
    )
