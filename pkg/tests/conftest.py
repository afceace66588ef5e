import pytest


def pytest_configure(config):
    config.acceptance_lines = []


@pytest.fixture
def verdict(request):
    """Record one acceptance line; it is echoed now and again in the summary."""
    def record(number, ok, text):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {text}"
        request.config.acceptance_lines.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance")
        for line in sorted(lines):
            terminalreporter.write_line(line)
