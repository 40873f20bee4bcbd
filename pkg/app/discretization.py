from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.integrate import trapezoid

from app.errors import SimulationError
from app.potential import PotentialSpec, evaluate, real_part

logger = logging.getLogger(__name__)

HARD_WALL = "hard_wall"
CAP = "cap"
BOUNDARY_ALIASES = {"hard_wall": HARD_WALL, "hardwall": HARD_WALL, "cap": CAP}
MAX_SPACING_IN_OSCILLATOR_LENGTHS = 0.2


class GridTooCoarse(SimulationError):
    pass


class OutOfGrid(SimulationError):
    pass


def normalize_boundary(tag: str) -> str:
    try:
        return BOUNDARY_ALIASES[tag.strip().lower()]
    except KeyError as exc:
        raise ValueError(f"boundary must be one of hard_wall, hardwall, cap (got {tag!r})") from exc


@dataclass(frozen=True)
class Grid:
    x_min: float
    x_max: float
    N: int

    def __post_init__(self) -> None:
        if self.N < 16:
            raise ValueError("grid N must be >= 16")
        if not self.x_max > self.x_min:
            raise ValueError("grid x_max must be > x_min")

    @classmethod
    def from_spacing(cls, x_min: float, x_max: float, h: float) -> Grid:
        if h <= 0:
            raise ValueError("grid h must be > 0")
        count = int(round((x_max - x_min) / h)) + 1
        return cls(x_min=float(x_min), x_max=float(x_max), N=count)

    @property
    def h(self) -> float:
        return (self.x_max - self.x_min) / (self.N - 1)

    @cached_property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.N)

    def index_of(self, x: float) -> int:
        if x < self.x_min - 0.5 * self.h or x > self.x_max + 0.5 * self.h:
            raise OutOfGrid(f"x={x:.6g} outside grid [{self.x_min:.6g}, {self.x_max:.6g}]")
        return int(min(max(round((x - self.x_min) / self.h), 0), self.N - 1))


def validate_grid(grid: Grid, spec: PotentialSpec) -> None:
    left_wall = float(real_part(spec, grid.x_min))
    if left_wall < 3.0 * spec.V_b:
        raise ValueError(f"grid x_min must satisfy V(x_min) >= 3*V_b (V(x_min)={left_wall:.6g})")
    if spec.eta > 0 and grid.x_max <= spec.x_cap:
        raise ValueError("grid x_max must extend beyond x_cap to leave room for the absorber")
    if grid.x_max < spec.L + spec.w:
        raise ValueError("grid x_max must lie beyond the barrier")


@dataclass(frozen=True, eq=False)
class HamiltonianMatrix:
    """Tridiagonal Hamiltonian with Dirichlet ends; the off-diagonal is the constant hopping term."""

    diagonal: np.ndarray
    hopping: float
    boundary: str
    grid: Grid
    mass: float = 1.0
    hbar: float = 1.0
    spec: PotentialSpec | None = None

    @property
    def size(self) -> int:
        return int(self.diagonal.shape[0])

    @property
    def off_diagonal(self) -> np.ndarray:
        return np.full(self.size - 1, self.hopping)

    @property
    def is_real(self) -> bool:
        return bool(np.all(self.diagonal.imag == 0.0))

    def matvec(self, psi: np.ndarray) -> np.ndarray:
        out = self.diagonal * psi
        out[:-1] += self.hopping * psi[1:]
        out[1:] += self.hopping * psi[:-1]
        return out

    def to_dense(self) -> np.ndarray:
        dense = np.diag(self.diagonal.astype(complex))
        idx = np.arange(self.size - 1)
        dense[idx, idx + 1] = self.hopping
        dense[idx + 1, idx] = self.hopping
        return dense

    def to_banded(self, scale: complex = 1.0, shift: complex = 0.0) -> np.ndarray:
        """(1, 1)-banded storage of shift*I + scale*H for scipy.linalg.solve_banded."""
        banded = np.zeros((3, self.size), dtype=complex)
        banded[0, 1:] = scale * self.hopping
        banded[1, :] = shift + scale * self.diagonal
        banded[2, :-1] = scale * self.hopping
        return banded

    def norm_inf(self) -> float:
        rows = np.abs(self.diagonal) + 2.0 * abs(self.hopping)
        return float(np.max(rows))


def build_hamiltonian(
    grid: Grid,
    potential_values: np.ndarray,
    mass: float = 1.0,
    hbar: float = 1.0,
    boundary: str = HARD_WALL,
    spec: PotentialSpec | None = None,
) -> HamiltonianMatrix:
    values = np.asarray(potential_values)
    if values.shape != (grid.N,):
        raise ValueError(f"potential samples must have shape ({grid.N},)")
    kinetic = hbar**2 / (2.0 * mass * grid.h**2)
    diagonal = (2.0 * kinetic + values).astype(complex)
    return HamiltonianMatrix(
        diagonal=diagonal,
        hopping=-kinetic,
        boundary=normalize_boundary(boundary),
        grid=grid,
        mass=mass,
        hbar=hbar,
        spec=spec,
    )


def assemble(spec: PotentialSpec, grid: Grid, bc: str) -> HamiltonianMatrix:
    boundary = normalize_boundary(bc)
    limit = MAX_SPACING_IN_OSCILLATOR_LENGTHS * spec.oscillator_length
    if grid.h > limit:
        raise GridTooCoarse(f"grid spacing {grid.h:.4g} exceeds {limit:.4g} (0.2 oscillator lengths)")
    if boundary == CAP:
        values = evaluate(spec, grid.x)
    else:
        values = real_part(spec, grid.x)
    matrix = build_hamiltonian(grid, values, mass=spec.m, hbar=spec.hbar, boundary=boundary, spec=spec)
    logger.info("assembled %s Hamiltonian: N=%d h=%.4g", boundary, grid.N, grid.h)
    return matrix


def current_at(psi: np.ndarray, grid: Grid, x: float, m: float, hbar: float = 1.0) -> float:
    if x - grid.x_min < 2.0 * grid.h - 1e-12 or grid.x_max - x < 2.0 * grid.h - 1e-12:
        raise OutOfGrid(f"current point x={x:.6g} must be at least 2h inside the grid")
    i = grid.index_of(x)
    derivative = (psi[i + 1] - psi[i - 1]) / (2.0 * grid.h)
    return float(hbar / m * np.imag(np.conj(psi[i]) * derivative))


def well_weights(grid: Grid, x_t: float) -> np.ndarray:
    """Trapezoid weights on nodes x_min .. x_T (nearest node)."""
    stop = grid.index_of(x_t)
    weights = np.full(stop + 1, grid.h)
    weights[0] *= 0.5
    weights[-1] *= 0.5
    if stop == 0:
        weights[:] = 0.0
    return weights


def prob_in_well(psi: np.ndarray, grid: Grid, x_t: float) -> float:
    stop = grid.index_of(x_t)
    return float(trapezoid(np.abs(psi[: stop + 1]) ** 2, dx=grid.h))

