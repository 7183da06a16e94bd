import time
from dataclasses import dataclass

import numpy as np
import pytest

from lsmpc.mpc import MpcConfig, SimLog, initialize_U0, simulate_closed_loop
from lsmpc.sphere import SphereModel, SphereParams, plant_step, seed_guess, stop_predicate

ACCEPTANCE_LINES = []


@dataclass
class GoldenRun:
    params: SphereParams
    U0: np.ndarray
    log: SimLog
    mpc: MpcConfig
    runtime: float


@pytest.fixture(scope="session")
def bench_params():
    return SphereParams()


@pytest.fixture(scope="session")
def golden_U0(bench_params):
    model = SphereModel(bench_params)
    return initialize_U0(model, seed_guess(bench_params), np.array(bench_params.x0), 0.0, tol=1e-10)


@pytest.fixture(scope="session")
def golden(bench_params, golden_U0):
    """Closed loop with the default constants, from the initialized U0."""
    model = SphereModel(bench_params)
    mpc = MpcConfig(h=bench_params.h, dt=bench_params.dt, steps=1000)
    start = time.perf_counter()
    log = simulate_closed_loop(
        model,
        golden_U0,
        np.array(bench_params.x0),
        0.0,
        mpc,
        plant_step,
        model.first_control,
        stop_predicate(bench_params),
    )
    return GoldenRun(bench_params, golden_U0, log, mpc, time.perf_counter() - start)


@pytest.fixture
def acceptance_line():
    def record(number, passed, text):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {text}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
