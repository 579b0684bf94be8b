import pytest

_VERDICTS = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion and return the flag."""
    def record(n, title, ok, detail=""):
        line = f"criterion {n} {'PASS' if ok else 'FAIL'}  {title}  {detail}".rstrip()
        print(line)
        _VERDICTS.append((n, line))
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_VERDICTS):
            terminalreporter.write_line(line)
