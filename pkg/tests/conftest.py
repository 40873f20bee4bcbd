import pytest

from app.discretization import CAP, Grid, HamiltonianMatrix, assemble
from app.potential import PotentialSpec
from app.spectral import ResonantState, eigendecompose, select_resonances

# L = 3 keeps the barrier low enough that three levels have resolvable widths
SMALL_POTENTIAL = {"L": 3.0, "V_b": 4.5, "w": 0.5, "delta": 0.2, "x_cap": 13.5, "eta": 0.01}
SMALL_GRID = {"x_min": -6.0, "x_max": 28.5, "h": 0.05}


def pytest_addoption(parser: pytest.Parser) -> None:
    parser.addoption("--runslow", action="store_true", default=False, help="run full-size study checks")


def pytest_collection_modifyitems(config: pytest.Config, items: list[pytest.Item]) -> None:
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session")
def small_spec() -> PotentialSpec:
    return PotentialSpec(**SMALL_POTENTIAL)


@pytest.fixture(scope="session")
def small_grid() -> Grid:
    return Grid.from_spacing(**SMALL_GRID)


@pytest.fixture(scope="session")
def small_x_t(small_spec: PotentialSpec) -> float:
    return small_spec.default_x_t


@pytest.fixture(scope="session")
def small_cap(small_spec: PotentialSpec, small_grid: Grid) -> HamiltonianMatrix:
    return assemble(small_spec, small_grid, CAP)


@pytest.fixture(scope="session")
def small_resonances(small_cap: HamiltonianMatrix, small_x_t: float) -> list[ResonantState]:
    return select_resonances(eigendecompose(small_cap), small_cap, small_x_t, max_count=3)


@pytest.fixture
def small_config_data() -> dict:
    return {
        "experiment": "small",
        "potential": dict(SMALL_POTENTIAL),
        "grid": {"x_min": -6.0, "x_max": 28.5, "h": 0.05},
        "evolution": {"periods": 2},
        "state": {"kind": "random_phase", "alpha": 0.8, "n_max": 2, "draws": 8},
        "spectral": {"max_count": 3},
        "wkb": {"samples": 40},
    }

