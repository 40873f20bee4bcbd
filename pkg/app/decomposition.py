from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import solve
from scipy.special import eval_hermite, gammaln

from app.discretization import Grid, prob_in_well, well_weights
from app.errors import SimulationError
from app.potential import PotentialSpec
from app.spectral import ResonantState

logger = logging.getLogger(__name__)

CONDITION_LIMIT = 1e6
SOLVE_RTOL = 1e-10
COHERENT_MASS_TOL = 1e-8
NORM_SLACK = 1e-6


class IllConditioned(SimulationError):
    pass


class DisplacementTooLarge(SimulationError):
    pass


@dataclass(frozen=True, eq=False)
class InitialState:
    coefficients: np.ndarray
    basis: list[ResonantState]
    psi0: np.ndarray | None
    label: str

    def __post_init__(self) -> None:
        if self.coefficients.shape[0] != len(self.basis):
            raise ValueError("coefficients and basis must have the same length")
        weight = float(np.sum(np.abs(self.coefficients) ** 2))
        if weight > 1.0 + NORM_SLACK:
            raise ValueError(f"sum |c_n|^2 = {weight:.8f} exceeds 1")

    @property
    def captured_weight(self) -> float:
        return float(np.sum(np.abs(self.coefficients) ** 2))


@dataclass(frozen=True, eq=False)
class OverlapMatrix:
    matrix: np.ndarray
    condition: float
    grid: Grid
    x_t: float


def _truncated_basis(states: list[ResonantState], grid: Grid, x_t: float) -> np.ndarray:
    if not states:
        raise ValueError("overlap needs at least one state")
    stop = grid.index_of(x_t)
    columns = []
    for state in states:
        if state.psi is None:
            raise ValueError(f"state {state.n} has no sampled wavefunction")
        columns.append(state.psi[: stop + 1])
    return np.stack(columns, axis=1)


def overlap(states: list[ResonantState], grid: Grid, x_t: float) -> OverlapMatrix:
    basis = _truncated_basis(states, grid, x_t)
    weights = well_weights(grid, x_t)
    matrix = basis.conj().T @ (weights[:, None] * basis)
    condition = float(np.linalg.cond(matrix))
    if not condition <= CONDITION_LIMIT:
        raise IllConditioned(f"overlap condition estimate {condition:.3e} exceeds {CONDITION_LIMIT:.0e}")
    logger.debug("overlap matrix %dx%d, condition %.4g", matrix.shape[0], matrix.shape[1], condition)
    return OverlapMatrix(matrix=matrix, condition=condition, grid=grid, x_t=x_t)


def project(psi0: np.ndarray, states: list[ResonantState], overlap_matrix: OverlapMatrix) -> np.ndarray:
    grid = overlap_matrix.grid
    x_t = overlap_matrix.x_t
    basis = _truncated_basis(states, grid, x_t)
    weights = well_weights(grid, x_t)
    rhs = basis.conj().T @ (weights * psi0[: basis.shape[0]])
    coefficients = solve(overlap_matrix.matrix, rhs, check_finite=False)
    residual = np.linalg.norm(overlap_matrix.matrix @ coefficients - rhs)
    scale = np.linalg.norm(rhs)
    if scale > 0 and residual > SOLVE_RTOL * scale:
        raise IllConditioned(f"projection residual {residual:.3e} exceeds {SOLVE_RTOL:.0e} of the overlap vector")
    return coefficients


def synthesize(coefficients: np.ndarray, states: list[ResonantState]) -> np.ndarray:
    if len(coefficients) != len(states):
        raise ValueError("coefficients and states must have the same length")
    total = np.zeros_like(states[0].psi, dtype=complex)
    for coefficient, state in zip(coefficients, states):
        total += coefficient * state.psi
    return total


def coherent_coefficients(alpha: complex, n_max: int) -> np.ndarray:
    if n_max < 0:
        raise ValueError("n_max must be >= 0")
    levels = np.arange(n_max + 1)
    modulus = abs(alpha)
    if modulus == 0.0:
        values = np.zeros(n_max + 1, dtype=complex)
        values[0] = 1.0
        return values
    log_magnitude = -0.5 * modulus**2 + levels * math.log(modulus) - 0.5 * gammaln(levels + 1.0)
    return np.exp(log_magnitude + 1j * levels * np.angle(alpha))


def coherent_truncation_mass(alpha: complex, n_max: int) -> float:
    return float(max(0.0, 1.0 - np.sum(np.abs(coherent_coefficients(alpha, n_max)) ** 2)))


def default_n_max(alpha: complex, available: int, tol: float = COHERENT_MASS_TOL) -> int:
    """Smallest n_max holding 1 - tol of the coherent weight, capped by the basis size."""
    n_max = 0
    while coherent_truncation_mass(alpha, n_max) > tol and n_max < 400:
        n_max += 1
    if n_max > available - 1:
        logger.warning(
            "coherent state needs %d levels but only %d resonances are available; truncated weight %.3e",
            n_max + 1,
            available,
            coherent_truncation_mass(alpha, available - 1),
        )
        return available - 1
    return n_max


def dominant_level(coefficients: np.ndarray) -> int:
    weights = np.abs(coefficients) ** 2
    best = float(np.max(weights))
    return int(np.flatnonzero(weights >= best * (1.0 - 1e-12))[-1])


def oscillator_eigenfunction(n: int, spec: PotentialSpec, x: np.ndarray) -> np.ndarray:
    """Harmonic eigenfunction with positive sign at large positive x."""
    d = spec.oscillator_length
    y = np.asarray(x, dtype=float) / d
    log_norm = -0.5 * (n * math.log(2.0) + gammaln(n + 1.0) + 0.5 * math.log(math.pi) + math.log(d))
    return eval_hermite(n, y) * np.exp(log_norm - 0.5 * y**2)


def coherent_wavefunction(alpha: complex, spec: PotentialSpec, grid: Grid) -> np.ndarray:
    d = spec.oscillator_length
    alpha = complex(alpha)
    centre = math.sqrt(2.0) * d * alpha.real
    boost = math.sqrt(2.0) * spec.hbar * alpha.imag / d
    if centre + 3.0 * d > spec.L:
        raise DisplacementTooLarge(f"coherent centre {centre:.4g} + 3d exceeds the well edge L={spec.L:.4g}")
    x = grid.x
    exponent = -((x - centre) ** 2) / (2.0 * d**2) + 1j * boost * (x - 0.5 * centre) / spec.hbar
    return (math.pi * d**2) ** -0.25 * np.exp(exponent)


def random_phase_state(magnitudes: np.ndarray, seed: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(seed))
    phases = rng.uniform(0.0, 2.0 * math.pi, size=len(magnitudes))
    return np.abs(np.asarray(magnitudes)) * np.exp(1j * phases)


def load_state_file(path: Path, grid: Grid, x_t: float) -> np.ndarray:
    """CSV with header and columns x, re, im; resampled on the grid and normalized on the well side."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] < 3:
        raise ValueError(f"{path} must have columns x, re, im")
    order = np.argsort(data[:, 0])
    xs = data[order, 0]
    psi = np.interp(grid.x, xs, data[order, 1], left=0.0, right=0.0) + 1j * np.interp(
        grid.x, xs, data[order, 2], left=0.0, right=0.0
    )
    norm = prob_in_well(psi, grid, x_t)
    if norm <= 0.0:
        raise ValueError(f"{path} has no weight left of x_T")
    return psi / math.sqrt(norm)
