from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np
from scipy.linalg import LinAlgError, eig, eigh_tridiagonal

from app.discretization import Grid, HamiltonianMatrix, current_at, prob_in_well
from app.errors import SimulationError

logger = logging.getLogger(__name__)

RESIDUAL_RTOL = 1e-8
LOCALIZATION_THRESHOLD = 0.5
# widths below this many machine-epsilons of ||H|| carry no digits in the eigenvalue
WIDTH_RESOLUTION_FACTOR = 1e3
RESIDUAL_CHUNK = 256


class SolverFailure(SimulationError):
    pass


class NoResonancesFound(SimulationError):
    pass


class DuplicateLevel(SimulationError):
    pass


@dataclass(frozen=True, eq=False)
class ResonantState:
    n: int
    eps: complex
    E: float
    Gamma: float
    psi: np.ndarray | None
    A: float
    k_abs: float
    delta: float
    localization: float = math.nan
    width_source: str = "eigenvalue"

    @property
    def re_k(self) -> float:
        return self.k_abs * math.cos(self.delta)


@dataclass(frozen=True, eq=False)
class Spectrum:
    values: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray

    def __len__(self) -> int:
        return int(self.values.shape[0])

    def __iter__(self) -> Iterator[tuple[complex, np.ndarray]]:
        for index in range(len(self)):
            yield complex(self.values[index]), self.vectors[:, index]


def outgoing_data(energy: float, gamma: float, m: float, hbar: float) -> tuple[float, float, float]:
    """|k|, arg k and the outgoing amplitude A for a level of complex energy E - i*hbar*Gamma/2."""
    half_width = 0.5 * hbar * gamma
    k_abs = math.sqrt(2.0 * m) * (energy**2 + half_width**2) ** 0.25
    delta = -0.5 * math.atan(hbar * gamma / (2.0 * energy))
    re_k = k_abs * math.cos(delta)
    amplitude = math.sqrt(m * gamma / re_k)
    return k_abs, delta, amplitude


def _residual_norms(hamiltonian: HamiltonianMatrix, values: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    norms = np.empty(values.shape[0])
    for start in range(0, values.shape[0], RESIDUAL_CHUNK):
        block = vectors[:, start : start + RESIDUAL_CHUNK]
        applied = hamiltonian.diagonal[:, None] * block
        applied[:-1] += hamiltonian.hopping * block[1:]
        applied[1:] += hamiltonian.hopping * block[:-1]
        applied -= block * values[None, start : start + RESIDUAL_CHUNK]
        norms[start : start + RESIDUAL_CHUNK] = np.linalg.norm(applied, axis=0) / np.linalg.norm(block, axis=0)
    return norms


def eigendecompose(hamiltonian: HamiltonianMatrix) -> Spectrum:
    try:
        if hamiltonian.is_real:
            values, vectors = eigh_tridiagonal(hamiltonian.diagonal.real, hamiltonian.off_diagonal)
            values = values.astype(complex)
            vectors = vectors.astype(complex)
        else:
            values, vectors = eig(hamiltonian.to_dense(), overwrite_a=True, check_finite=False)
    except (LinAlgError, ValueError) as exc:
        raise SolverFailure(f"eigensolver did not converge: {exc}") from exc

    order = np.argsort(values.real, kind="stable")
    values = values[order]
    vectors = vectors[:, order]
    residuals = _residual_norms(hamiltonian, values, vectors)
    bound = RESIDUAL_RTOL * hamiltonian.norm_inf()
    bad = np.flatnonzero(~(residuals <= bound))
    if bad.size:
        index = int(bad[0])
        raise SolverFailure(
            f"eigenpair {index} residual {residuals[index]:.3e} exceeds {bound:.3e} (lambda={values[index]:.6g})"
        )
    logger.info("eigendecomposition: %d pairs, max residual %.2e", values.shape[0], float(np.max(residuals)))
    return Spectrum(values=values, vectors=vectors, residuals=residuals)


def localization_fraction(vector: np.ndarray, grid: Grid, x_t: float) -> float:
    total = prob_in_well(vector, grid, grid.x_max)
    if total == 0.0:
        return 0.0
    return prob_in_well(vector, grid, x_t) / total


def local_wavenumber(psi: np.ndarray, grid: Grid, x: float) -> float:
    i = grid.index_of(x)
    derivative = (psi[i + 1] - psi[i - 1]) / (2.0 * grid.h)
    return float(np.imag(derivative / psi[i]))


def width_floor(hamiltonian: HamiltonianMatrix) -> float:
    return WIDTH_RESOLUTION_FACTOR * np.finfo(float).eps * hamiltonian.norm_inf()


def _normalize(vector: np.ndarray, grid: Grid, x_t: float) -> np.ndarray:
    psi = vector / math.sqrt(prob_in_well(vector, grid, x_t))
    anchor = psi[grid.index_of(x_t)]
    return psi * (np.conj(anchor) / abs(anchor))


def select_resonances(
    spectrum: Spectrum,
    hamiltonian: HamiltonianMatrix,
    x_t: float,
    max_count: int,
) -> list[ResonantState]:
    spec = hamiltonian.spec
    if spec is None:
        raise ValueError("resonance selection needs a Hamiltonian assembled from a PotentialSpec")
    if max_count < 1:
        raise ValueError("max_count must be >= 1")
    grid = hamiltonian.grid
    floor = width_floor(hamiltonian)
    hbar = hamiltonian.hbar
    mass = hamiltonian.mass

    kept: list[ResonantState] = []
    for value, vector in spectrum:
        if not 0.0 < value.real < spec.V_b:
            continue
        if value.imag >= floor:
            continue
        fraction = localization_fraction(vector, grid, x_t)
        if fraction < LOCALIZATION_THRESHOLD:
            continue
        psi = _normalize(vector, grid, x_t)
        if -value.imag > floor:
            gamma = -2.0 * value.imag / hbar
            source = "eigenvalue"
        else:
            # -Im lambda is below eigensolver resolution; take the width from the flux balance at x_T
            gamma = current_at(psi, grid, x_t, mass, hbar) / prob_in_well(psi, grid, x_t)
            source = "flux"
        if not gamma > 0.0:
            logger.debug("dropping candidate at E=%.6g: width %.3e from %s", value.real, gamma, source)
            continue
        energy = float(value.real)
        k_abs, delta, amplitude = outgoing_data(energy, gamma, mass, hbar)
        kept.append(
            ResonantState(
                n=len(kept),
                eps=complex(energy, -0.5 * hbar * gamma),
                E=energy,
                Gamma=gamma,
                psi=psi,
                A=amplitude,
                k_abs=k_abs,
                delta=delta,
                localization=fraction,
                width_source=source,
            )
        )
        logger.debug(
            "resonance n=%d E=%.8g Gamma=%.4e (%s) localization=%.4f",
            len(kept) - 1,
            energy,
            gamma,
            source,
            fraction,
        )
        if len(kept) == max_count:
            break

    if not kept:
        raise NoResonancesFound(f"no localized states with 0 < E < V_b left of x_T={x_t:.6g}")
    for lower, upper in zip(kept, kept[1:]):
        gap = upper.E - lower.E
        if gap < hbar * max(lower.Gamma, upper.Gamma):
            raise DuplicateLevel(f"levels {lower.n} and {upper.n} are closer than their widths (gap {gap:.3e})")
    logger.info("selected %d resonances (widths from eigenvalues: %d)", len(kept), sum(s.width_source == "eigenvalue" for s in kept))
    return kept
