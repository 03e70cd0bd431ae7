import pytest

from rfloc.channel import EnvironmentProfile, FrequencyGrid
from rfloc.dataset import GridGeometry, SplitSpec, generate_synthetic, split

SEED = 42


@pytest.fixture(scope="session")
def small_profiles():
    """Four quick profiles (same shape as the built-ins, smaller path counts)."""
    return {
        "Lab": EnvironmentProfile("Lab", (6, 9), 80e-9, 0.5, 120e-9),
        "NarrowCorridor": EnvironmentProfile("NarrowCorridor", (4, 6), 50e-9, 1.5, 100e-9),
        "Lobby": EnvironmentProfile("Lobby", (3, 5), 30e-9, 3.0, 80e-9),
        "SportsHall": EnvironmentProfile("SportsHall", (2, 3), 15e-9, 6.0, 60e-9),
    }


@pytest.fixture(scope="session")
def small_grid():
    return FrequencyGrid(center_hz=2.4e9, span_hz=100e6, n_points=32)


@pytest.fixture(scope="session")
def tiny_sets(small_profiles):
    """4 environments, 4x4 grid, 5 iterations: fast but non-trivial."""
    geometry = GridGeometry(rows=4, cols=4, spacing_cm=50.0)
    grid = FrequencyGrid(n_points=32)
    return {
        env: generate_synthetic(p, geometry, 5, SEED, freq_grid=grid, max_lag=8)
        for env, p in small_profiles.items()
    }


@pytest.fixture(scope="session")
def tiny_split(tiny_sets):
    spec = SplitSpec(train_fraction=0.75, seed=SEED)
    train, test = {}, {}
    for env, mset in tiny_sets.items():
        train[env], test[env] = split(mset, spec)
    return train, test
