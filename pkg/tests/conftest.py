import pytest

CRITERIA: dict = {}


@pytest.fixture
def criterion():
    """Record the outcome of an acceptance criterion for the end-of-run summary."""
    def record(num, ok: bool, detail: str):
        CRITERIA[str(num)] = (ok, detail)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(CRITERIA, key=lambda k: (int(k.rstrip("abc")), k)):
        ok, detail = CRITERIA[num]
        terminalreporter.write_line(f"criterion {num:>4}: {'PASS' if ok else 'FAIL'}  {detail}")
