import pytest

_verdicts: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def verdict():
    """Record one acceptance verdict; the summary is printed after the run."""

    def record(number: int, name: str, ok: bool, detail: str = "") -> bool:
        _verdicts[number] = (name, bool(ok), detail)
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_verdicts):
        name, ok, detail = _verdicts[n]
        terminalreporter.write_line(f"criterion {n} ({name}): {'PASS' if ok else 'FAIL'}  {detail}".rstrip())
