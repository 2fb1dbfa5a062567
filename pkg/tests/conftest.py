import numpy as np
import pytest

from prefsave.env import build_environment
from prefsave.solver import WealthGrid, solve


def make_env(bar_P=((1.0,),), gamma=(2.0,), beta=0.95, R=1.02, Y=1.0, tilde_P=None,
             atoms=None):
    cfg = {"bar_P": [list(r) for r in bar_P], "gamma": list(gamma)}
    if tilde_P is not None:
        cfg["tilde_P"] = [list(r) for r in tilde_P]
    if atoms is not None:
        cfg["innovations"] = {"atoms": atoms}
    else:
        cfg["innovations"] = {"constant": {"beta": beta, "R": R, "Y": Y}}
    return build_environment(cfg)


BENCH_GRID = WealthGrid.make(0.01, 1e4, 400, "geometric")


@pytest.fixture(scope="session")
def benchmark_env():
    return make_env()


@pytest.fixture(scope="session")
def benchmark_solution(benchmark_env):
    return solve(benchmark_env, BENCH_GRID, tol=1e-10)


@pytest.fixture(scope="session")
def downward_env():
    return make_env(bar_P=((0.5, 0.5), (0.5, 0.5)), gamma=(1.5, 3.0))


@pytest.fixture(scope="session")
def downward_solution(downward_env):
    return solve(downward_env, BENCH_GRID, tol=1e-10)


@pytest.fixture(scope="session")
def upward_env():
    return make_env(bar_P=((0.0, 1.0), (0.0, 1.0)), gamma=(1.5, 3.0))


@pytest.fixture(scope="session")
def upward_solution(upward_env):
    return solve(upward_env, BENCH_GRID, tol=1e-10)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
