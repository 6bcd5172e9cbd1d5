import os
from pathlib import Path

import pytest
from dotenv import load_dotenv

from lie_transport.cost import CostModel
from lie_transport.grid import PeriodicGrid
from lie_transport.moduli import ModuliChart, solve_lie, closed_form
from lie_transport.transport import (
    DensityPair,
    TransportState,
    assemble_state,
    fourier_density,
)
from lie_transport.experiment import probe_potential

env_file = Path(".env.local")
load_dotenv(env_file)

BUMP = [{"k": [1, 0], "cos": 0.2}]
TILT = [{"k": [1, 1], "sin": 0.1}]


def get_run_slow() -> bool:
    return os.getenv("LT_RUN_SLOW", "false").lower() == "true"


@pytest.fixture(scope="session")
def grid2() -> PeriodicGrid:
    return PeriodicGrid((32, 32))


@pytest.fixture(scope="session")
def grid3() -> PeriodicGrid:
    return PeriodicGrid.cube(3, 8)


@pytest.fixture(scope="session")
def quadratic() -> CostModel:
    return CostModel.quadratic()


@pytest.fixture(scope="session")
def perturbed() -> CostModel:
    return CostModel.perturbed(0.01, (1, 1))


@pytest.fixture(scope="session")
def uniform2(grid2: PeriodicGrid) -> DensityPair:
    return DensityPair.uniform(grid2)


@pytest.fixture(scope="session")
def bumpy2(grid2: PeriodicGrid) -> DensityPair:
    """Nonuniform source and target on the 32x32 grid."""
    return DensityPair(
        fourier_density(grid2, BUMP), fourier_density(grid2, TILT)
    )


@pytest.fixture(scope="session")
def probe2(
    grid2: PeriodicGrid, perturbed: CostModel, bumpy2: DensityPair
) -> TransportState:
    phi = probe_potential(grid2, 0.01)
    eta = closed_form(grid2, [0.05, -0.03], phi)
    return assemble_state(grid2, perturbed, bumpy2, eta)


@pytest.fixture(scope="session")
def identity2(
    grid2: PeriodicGrid, quadratic: CostModel, uniform2: DensityPair
) -> ModuliChart:
    return solve_lie(quadratic, uniform2, [0.0, 0.0])
