import pytest

_RESULTS: dict = {}


@pytest.fixture
def acceptance(request):
    """Record ``(criterion, ok, detail)`` and echo a PASS/FAIL line straight away."""
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")

    def record(n: int, ok: bool, detail: str) -> bool:
        line = f"ACCEPTANCE {n}: {'PASS' if ok else 'FAIL'} {detail}"
        _RESULTS[n] = line
        if reporter is not None:
            reporter.write_line("")
            reporter.write_line(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        terminalreporter.write_line(_RESULTS[n])
