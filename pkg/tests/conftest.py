import numpy as np
import pytest

from vdlab import Interaction, PhaseSpaceGrid, VelocityProfile, run, sample_initial

LINEAR_RATE = 8.281  # 2 pi Re xi of the dominant k=1 root, Maxwellian T=1, A=1/pi
FIT_WINDOW = (0.3, 2.0)


@pytest.fixture(scope="session")
def maxwellian():
    return VelocityProfile.maxwellian(1.0)


@pytest.fixture(scope="session")
def coulomb():
    return Interaction.coulomb()


@pytest.fixture(scope="session")
def bench_grid(maxwellian):
    return PhaseSpaceGrid.for_profile(maxwellian, n_x=32, n_v=512, dt=1 / 64)


def benchmark_run(profile, interaction, grid, eps, dt=1 / 64, horizon=20.0, stride=1, **kw):
    fi = sample_initial(profile, [(1, eps)], grid)
    return run(fi, interaction, horizon, dt, stride=stride, **kw)


@pytest.fixture(scope="session")
def bench_run(maxwellian, coulomb, bench_grid):
    """epsilon = 1e-3 benchmark at the reference resolution, every step recorded."""
    return benchmark_run(maxwellian, coulomb, bench_grid, 1e-3)


@pytest.fixture(scope="session")
def bench_run_half_dt(maxwellian, coulomb, bench_grid):
    return benchmark_run(maxwellian, coulomb, bench_grid, 1e-3, dt=1 / 128, stride=2)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def bench_newton(maxwellian, coulomb, bench_grid):
    """Four Newton levels on the epsilon = 1e-3 benchmark."""
    from vdlab import newton_solve

    fi = sample_initial(maxwellian, [(1, 1e-3)], bench_grid)
    return newton_solve(fi, maxwellian, coulomb, 4, 20.0, stride=8)
