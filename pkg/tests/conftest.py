import pytest

_CRITERIA = {}


@pytest.fixture
def criterion():
    """``criterion(number, name, ok, detail)`` records one acceptance line and returns ``ok``."""

    def record(number, name, ok, detail):
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {name}: {detail}"
        _CRITERIA[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
