import os
import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from convex_mhd import harness
from convex_mhd.spectral import Grid, VectorField

settings.register_profile(
    "default", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# wall-clock seconds of the session fixtures, read by the acceptance report
TIMINGS: dict[str, float] = {}


def random_vector(grid: Grid, rng: np.random.Generator, kmax: int = 4, zero_mean: bool = True) -> VectorField:
    """Band-limited random vector field with modes |k_j| <= kmax."""
    hat = np.zeros((3,) + grid.k_squared.shape, dtype=complex)
    k = grid.wavenumbers
    band = (np.abs(k[0]) <= kmax) & (np.abs(k[1]) <= kmax) & (np.abs(k[2]) <= kmax)
    noise = rng.standard_normal(hat.shape) + 1j * rng.standard_normal(hat.shape)
    hat[:, band] = noise[:, band]
    if zero_mean:
        hat[:, 0, 0, 0] = 0.0
    hat[:, ~grid.regular] = 0.0
    return VectorField(grid, grid.ifft(hat))


@pytest.fixture(scope="session")
def desk_config() -> harness.RunConfig:
    return harness.RunConfig()


@pytest.fixture(scope="session")
def desk_run(desk_config):
    """One full level-0 -> level-1 iterate of the default desk configuration."""
    t0 = time.perf_counter()
    st0 = harness.init_state(desk_config)
    st1 = harness.iterate(st0, desk_config)
    TIMINGS["desk_run"] = time.perf_counter() - t0
    return st0, st1
