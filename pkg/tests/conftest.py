import pytest

ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])


@pytest.fixture
def verdict():
    def record(n: int, ok: bool, detail: str) -> None:
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
        ACCEPTANCE[n] = line
        print(line)
        assert ok, line

    return record
