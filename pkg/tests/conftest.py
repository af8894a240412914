import pytest

RESULTS = []


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(name, ok, detail)``."""

    def record(name, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  {name}  {detail}"
        RESULTS.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
