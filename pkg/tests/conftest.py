import pytest

from flsim.device import DEFAULT_TEMPLATES, FleetSpec, build_fleet


@pytest.fixture
def fleet20():
    return build_fleet(FleetSpec(3, 7, 10))


@pytest.fixture
def templates():
    return DEFAULT_TEMPLATES


_CRITERIA: dict[int, str] = {}


@pytest.fixture
def report():
    """Record and print one pass/fail line for an acceptance criterion."""
    def _report(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _CRITERIA[number] = line
        print(line)
        return ok
    return _report


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
