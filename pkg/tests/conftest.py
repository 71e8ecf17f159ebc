import pytest

_ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    """``acceptance(n, name, ok, detail)`` records one criterion line and asserts it."""

    def record(n, name, ok, detail=""):
        line = f"ACCEPTANCE {n} {name}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        _ACCEPTANCE[n] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
