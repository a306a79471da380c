from __future__ import annotations

import pytest
from hypothesis import HealthCheck, settings

from aklab.conjugation import build_stage_maps
from aklab.stage_params import desk_chain

settings.register_profile(
    "aklab", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("aklab")


@pytest.fixture(scope="session")
def chain3():
    return desk_chain(3)


@pytest.fixture(scope="session")
def maps3(chain3):
    return build_stage_maps(chain3)


@pytest.fixture(scope="session")
def chain5():
    return desk_chain(5)


@pytest.fixture(scope="session")
def maps5(chain5):
    return build_stage_maps(chain5)


_LINES = pytest.StashKey[list]()


@pytest.fixture
def report_criterion(request):
    """Record one acceptance line; printed again in the terminal summary."""
    lines = request.config.stash.setdefault(_LINES, [])

    def record(number: int, ok: bool, seconds: float, note: str = "") -> None:
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {seconds:8.1f} s  {note}"
        lines.append((number, line))
        print(line)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
