import pytest

_LINES = []


@pytest.fixture
def verdict():
    """Record a one-line PASS/FAIL verdict for the acceptance summary."""

    def record(label, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'}  {label}: {detail}"
        _LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
