import numpy as np
import pytest

from carnot_potentials import build_group, geometry as geo, potentials as pot


@pytest.fixture(scope="session")
def e3():
    return build_group("euclidean:3")


@pytest.fixture(scope="session")
def h1():
    return build_group("heisenberg:1")


@pytest.fixture(scope="session")
def fs_e3(e3):
    return pot.fundamental_solution_for(e3)


@pytest.fixture(scope="session")
def fs_h1(h1):
    return pot.fundamental_solution_for(h1)


@pytest.fixture(scope="session")
def ball_e3(e3):
    return geo.euclidean_ball(e3)


@pytest.fixture(scope="session")
def gball_h1(h1):
    return geo.gauge_ball(h1)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def verdict(request):
    """verdict(tag, ok, detail) records one acceptance line and returns ok."""
    lines = request.config.__dict__.setdefault("_acceptance_lines", [])

    def record(tag, ok, detail=""):
        line = f"{tag} {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.__dict__.get("_acceptance_lines")
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
