import random

import pytest

from cryptoeeg import paillier


@pytest.fixture(scope="session")
def tiny_keys():
    """p=5, q=7: small enough to brute-force every plaintext."""
    return paillier.keypair_from_primes(5, 7)


@pytest.fixture(scope="session")
def keys512():
    return paillier.keygen(512, random.Random(512))


@pytest.fixture(scope="session")
def keys256():
    return paillier.keygen(256, random.Random(256))


@pytest.fixture
def rng():
    return random.Random(1234)


# -- acceptance summary -------------------------------------------------------

_acceptance: dict[int, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    mark = getattr(report, "acceptance", None)
    if mark is None:
        return
    num, title = mark
    if report.when == "call" or report.outcome != "passed":
        prev = _acceptance.get(num, (title, "PASS"))[1]
        outcome = "PASS" if report.outcome == "passed" and prev == "PASS" else "FAIL"
        if report.outcome == "skipped":
            outcome = "SKIP"
        _acceptance[num] = (title, outcome)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    m = item.get_closest_marker("acceptance")
    if m is not None:
        outcome.get_result().acceptance = m.args


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_acceptance):
        title, outcome = _acceptance[num]
        terminalreporter.write_line(f"criterion {num}: {outcome}  {title}")
