import numpy as np
import pytest

from sgfio.symbols import SampleGrid, SgSymbol
from sgfio.quantize import BandlimitedBasis, default_grid, inversion_basis


@pytest.fixture(scope="session")
def grid44():
    """Desk-scale phase grid on [-4, 4]^2 with 65 nodes per axis."""
    return SampleGrid(4.0, 4.0, 65, 65)


@pytest.fixture(scope="session")
def op_grid():
    return default_grid()


@pytest.fixture(scope="session")
def op_basis(op_grid):
    return inversion_basis(op_grid)


@pytest.fixture(scope="session")
def measure_basis(op_grid):
    return BandlimitedBasis.build(op_grid)


@pytest.fixture(scope="session")
def ang_xi():
    return SgSymbol("ang(xi)", (0.0, 1.0))


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
