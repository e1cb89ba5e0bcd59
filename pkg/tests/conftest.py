import numpy as np
import pytest

from scatterpde import Domain, sample_grid, sample_lattice, sample_random

_CRITERIA = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def grid64():
    return sample_grid(Domain(32.0), 64)


@pytest.fixture(scope="session")
def scattered4096():
    return sample_lattice(Domain(32.0), 4096, 0)


@pytest.fixture(scope="session")
def uniform4096():
    return sample_random(Domain(32.0), 4096, 0)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    # record the call phase, or a setup error (e.g. a fixture that failed to train)
    if marker is None or not (rep.when == "call" or rep.failed):
        return
    number, title = marker.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    status = "PASS" if rep.passed else "FAIL"
    _CRITERIA[number] = f"criterion {number} [{status}] {title}" + (f" :: {detail}" if detail else "")


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
