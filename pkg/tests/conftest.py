import functools

import numpy as np
import pytest

from povtrap import SolverSettings, attractor_set, builtin_scenario
from povtrap.model import BUILTINS

# A = 6 * 10**0.3: the tillage model with a phosphorus stock of 10 folded into
# productivity. At the builtin A = 6 the system has a single attractor, so the
# two-attractor tests of the tillage model run on this variant.
FOLDED_A = 6 * 10**0.3


@functools.lru_cache(maxsize=None)
def model(name):
    if name == "fig4_folded":
        return builtin_scenario("fig4").with_params(A=FOLDED_A)
    return builtin_scenario(name)


@functools.lru_cache(maxsize=None)
def attractors(name):
    return attractor_set(model(name))


@pytest.fixture(scope="session")
def settings():
    return SolverSettings()


@pytest.fixture(params=sorted(BUILTINS))
def builtin_name(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# -- acceptance summary ---------------------------------------------------------

@pytest.fixture
def criterion(request):
    """Record a pass/fail line for an acceptance criterion and assert on it."""
    log = request.config.__dict__.setdefault("_acceptance_lines", [])

    def record(number, title, ok, detail):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        log.append((number, line))
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.__dict__.get("_acceptance_lines")
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(lines):
        terminalreporter.write_line(line)
