import pytest

_LINES = pytest.StashKey[list]()


@pytest.fixture
def report(request):
    """Record one pass/fail line for an acceptance criterion; lines are also
    repeated in the terminal summary."""
    lines = request.config.stash.setdefault(_LINES, [])

    def emit(criterion, ok, detail):
        line = f"criterion {criterion:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
