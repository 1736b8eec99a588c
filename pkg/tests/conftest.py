import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fermiweyl.geometry import DomainSpec
from fermiweyl.spectral import analytic_basis_box

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def square():
    return DomainSpec.unit_square()


@pytest.fixture(scope="session")
def cube():
    return DomainSpec.unit_cube()


@pytest.fixture(scope="session")
def square_basis(square):
    return analytic_basis_box(square, "dirichlet", 4096)


@pytest.fixture(scope="session")
def square_neumann(square):
    return analytic_basis_box(square, "neumann", 600)


@pytest.fixture(scope="session")
def cube_basis(cube):
    return analytic_basis_box(cube, "dirichlet", 4096)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def criterion(request, capsys):
    """Print and remember one ``CRITERION k: PASS/FAIL`` line."""
    lines = request.config.__dict__.setdefault("_criterion_lines", [])

    def report(k, ok, detail):
        line = f"CRITERION {k}: {'PASS' if ok else 'FAIL'} {detail}"
        lines.append(line)
        with capsys.disabled():
            print(f"\n{line}")
        return ok
    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.__dict__.get("_criterion_lines")
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
