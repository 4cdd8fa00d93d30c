import os
import sys

import numpy as np
import pytest

from delaylqr import CostWeights, DelayPlant, build_data, simulate
from delaylqr.config import generate, load_config

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIG = os.path.join(ROOT, "configs", "benchmark.json")

A_BENCH = np.array([[1.3, 0.5], [0.0, 1.2]])
B_BENCH = np.array([[1.0], [1.0]])
X0_BENCH = np.array([1.0, -1.0, 1.0, -1.0, 1.0, -1.0])


@pytest.fixture(scope="session")
def plant():
    return DelayPlant(A_BENCH, B_BENCH, 4)


@pytest.fixture(scope="session")
def weights():
    return CostWeights.uniform(2, 1, 4, 1e-4, 1e-4, 3e-4)


@pytest.fixture(scope="session")
def config():
    return load_config(CONFIG)


@pytest.fixture(scope="session")
def noisy_data(config):
    D, _ = generate(config)
    return D


@pytest.fixture(scope="session")
def clean_data(plant):
    u = 5.0 * np.sin(10.0 * np.arange(-4, 10))[:, None]
    traj = simulate(plant, np.zeros(2), u[:4], inputs=u[4:])
    return build_data(traj)


def random_stable(rng, N, m, radius=0.9):
    """Random closed loop with spectral radius ``radius`` plus a gain for the cost terms."""
    A = rng.standard_normal((N, N))
    A *= radius / max(abs(np.linalg.eigvals(A)))
    return A, rng.standard_normal((m, N))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
