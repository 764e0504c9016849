import pytest

VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """Record one pass/fail line for an acceptance criterion, then assert it."""

    def record(number: int, ok: bool, detail: str, hard: bool = True):
        status = "PASS" if ok else ("FAIL" if hard else "BELOW FLOOR (reported only)")
        line = f"criterion {number:2d}: {status}  {detail}"
        VERDICTS.append(line)
        print(line)
        if hard:
            assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS):
            terminalreporter.write_line(line)
