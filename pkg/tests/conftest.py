import pytest

from gsnbounds.channel import ChannelScenario, PowerSchedule
from gsnbounds.process import gauss_markov, gm_class_a_params


@pytest.fixture(scope="session")
def gm():
    return gauss_markov(1.0, 1.0, 1.0)


@pytest.fixture(scope="session")
def gm_params():
    return gm_class_a_params(1.0, 1.0, 1.0)


@pytest.fixture(scope="session")
def unit_scenario():
    return ChannelScenario(PowerSchedule("constant", 1.0))


# one summary line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def criterion(request):
    """Record and print the pass/fail line of one acceptance criterion."""

    def record(number: int, name: str, ok: bool, detail: str) -> None:
        line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {name}: {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
