import numpy as np
import pytest
from hypothesis import settings

from runaway_lab import config
from runaway_lab.potential import make_bounded_bump, make_capped_singular, make_null

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def bump():
    return make_bounded_bump(1.0, 1.0)


@pytest.fixture
def singular():
    return make_capped_singular(1.0, 1.5, 0.5, 1.0, 1e-3)


@pytest.fixture
def null():
    return make_null(1.0)


def free_config(**over):
    """rho0 = 0 configuration with the example numbers (M=1, E=1, xidot0=5, t_max=10)."""
    base = {"potential.kind": "bump", "fluid.rho0": 0.0, "body.M": 1.0, "body.E": 1.0,
            "body.xidot0": 5.0, "integration.t_max": 10.0}
    base.update(over)
    return config.SimConfig().with_overrides(base)


def small_bump_config(**over):
    """A short coupled run that finishes in about a second."""
    base = {"potential.kind": "bump", "fluid.rho0": 0.1, "body.xidot0": 10.0, "body.E": 1.0,
            "integration.t_max": 2.0, "grid.dx": 0.2, "grid.deta": 0.1}
    base.update(over)
    return config.SimConfig().with_overrides(base)


@pytest.fixture
def rng():
    return np.random.default_rng(7)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES = []


def report_criterion(label, passed, detail):
    line = f"{label} {'PASS' if passed else 'FAIL'}: {detail}"
    if passed is None:
        line = f"{label} REPORT: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
