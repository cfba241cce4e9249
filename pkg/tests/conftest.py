import numpy as np
import pytest

from rtmemu import emulator as emu
from rtmemu import nn, sampling
from rtmemu.oracle import WavelengthGrid
from rtmemu.sampling import StateRanges


def make_dataset(n=600, k=3, seed=0, grid=None):
    grid = grid or WavelengthGrid.uniform(k, 0.45, 0.85)
    X = sampling.sample_states(StateRanges(), n, grid.k, seed=seed)
    return sampling.generate_dataset(X, grid, seed=seed)


@pytest.fixture(scope="session")
def small_ds():
    return make_dataset()


@pytest.fixture(scope="session")
def small_emulator(small_ds):
    opts = nn.TrainOptions(max_epochs=40, tol=0.0, seed=0)
    return emu.train_emulator(small_ds, opts, hidden=(12, 12))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def wide_emulator():
    """Twelve-channel emulator: enough channels for joint retrieval."""
    ds = make_dataset(n=800, k=12, seed=1, grid=WavelengthGrid.uniform(12, 0.42, 0.88))
    opts = nn.TrainOptions(max_epochs=30, tol=0.0, seed=1)
    return emu.train_emulator(ds, opts, hidden=(10, 10))


def pytest_terminal_summary(terminalreporter):
    from .helpers import ACCEPTANCE

    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
