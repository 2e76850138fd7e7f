import os

import pytest

from rescue_ipw.simulate import SCENARIOS, generate_scenario


@pytest.fixture(scope="session", autouse=True)
def _isolated_truth_cache(tmp_path_factory):
    os.environ["RESCUE_IPW_CACHE"] = str(tmp_path_factory.mktemp("truth-cache"))
    yield


@pytest.fixture(scope="session")
def scenario1_data():
    return generate_scenario(SCENARIOS[1], 1000, 11)


@pytest.fixture(scope="session")
def scenario1_large():
    return generate_scenario(SCENARIOS[1], 100_000, 5)


_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE_LINES.append


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
