from functools import lru_cache

import numpy as np
import pytest

from wendytf import builtin_system, make_grid, simulate
from wendytf.systems import BENCHMARK_SYSTEMS


@lru_cache(maxsize=None)
def clean_data(name: str, M: int = 1000, T: float | None = None):
    system = builtin_system(name)
    grid = make_grid(system.T if T is None else T, M)
    return system, simulate(system, grid=grid)


@pytest.fixture(params=BENCHMARK_SYSTEMS)
def benchmark(request):
    return clean_data(request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def report(criterion: int, ok: bool, detail: str) -> None:
    line = f"criterion {criterion:2d} {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
