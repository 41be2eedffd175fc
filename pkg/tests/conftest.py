import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from lesionflow.templates import capsule, icosphere, plane  # noqa: E402

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def sphere():
    return icosphere(3, 1.0)


@pytest.fixture(scope="session")
def small_sphere():
    return icosphere(1, 10.0)


@pytest.fixture(scope="session")
def grid():
    return plane(12, spacing=1.0)


@pytest.fixture(scope="session")
def small_capsule():
    return capsule(24)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_points(mesh, rng, n):
    tri = rng.integers(mesh.n_triangles, size=n)
    bary = rng.dirichlet(np.ones(3), size=n)
    return tri, bary


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
