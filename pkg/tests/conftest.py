import pytest

# criterion number -> (passed, detail), filled by test_acceptance.py
CRITERIA: dict = {}


def record_criterion(num: int, passed: bool, detail: str) -> None:
    CRITERIA[num] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(CRITERIA):
        ok, detail = CRITERIA[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def criterion():
    return record_criterion
