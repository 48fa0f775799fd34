import pytest

_LINES_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_LINES_KEY] = {}


@pytest.fixture
def verdict(request):
    """Record the PASS/FAIL line of one acceptance criterion."""
    lines = request.config.stash[_LINES_KEY]

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES_KEY, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
