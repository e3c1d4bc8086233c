import numpy as np
import pytest

from ssg_popi.game import Game, make_example_game, random_game


@pytest.fixture
def example():
    """Example game with gamma_B * y > x."""
    return make_example_game(1.0, 3.0, 0.5, 0.9)


@pytest.fixture
def example_myopic():
    return make_example_game(1.0, 3.0, 0.0, 0.9)


def zero_game(S=2, A=2, B=2, gamma=0.5):
    T = np.zeros((S, A, B, S))
    T[..., 0] = 1.0
    z = np.zeros((S, A, B))
    return Game(T, z, z, gamma, gamma, np.full(S, 1.0 / S))


def single_state_game(rA, rB, gamma_A=0.5, gamma_B=0.5):
    rA = np.asarray(rA, dtype=float)[None]
    rB = np.asarray(rB, dtype=float)[None]
    T = np.ones(rA.shape + (1,))
    return Game(T, rA, rB, gamma_A, gamma_B, np.ones(1))


def rgame(seed, S=3, A=2, B=3, **kw):
    return random_game(np.random.default_rng(seed), S, A, B, **kw)


# --------------------------------------------------------------------------- acceptance reporting

_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when != "call" and not (report.when == "setup" and report.failed):
        return
    number, title = mark.args
    _CRITERIA[number] = ("PASS" if report.passed else "FAIL", title)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        status, title = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {title}")
