import numpy as np
import pytest

from equivmd._kernels import COMPILED_AVAILABLE, set_backend
from equivmd.simharness import build_scenario

BACKENDS = ["python"] + (["compiled"] if COMPILED_AVAILABLE else [])


@pytest.fixture(params=BACKENDS)
def backend(request):
    """Run the test once per available kernel backend."""
    previous = set_backend(request.param)
    yield request.param
    set_backend(previous.name)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def group1():
    return build_scenario("S1")


@pytest.fixture(scope="session")
def group2():
    return build_scenario("S2")


def random_spd(rng, p, cond=50.0):
    q, _ = np.linalg.qr(rng.normal(size=(p, p)))
    eig = np.geomspace(1.0, cond, p)
    return (q * eig) @ q.T


def pytest_terminal_summary(terminalreporter):
    import sys

    REPORT = getattr(sys.modules.get("test_acceptance"), "REPORT", None)
    if not REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(REPORT):
        ok, detail = REPORT[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'} - {detail}")
