import pytest


def pytest_configure(config):
    config._acceptance_lines = []


@pytest.fixture
def verdict(request):
    """Record and print one PASS/FAIL line for an acceptance criterion.

    Usage: ``with verdict(n, "title") as note: ...; note("detail")``.
    """
    from contextlib import contextmanager

    @contextmanager
    def run(number, title):
        details = []
        try:
            yield details.append
        except BaseException:
            line = f"CRITERION {number:>2} FAIL  {title}" + (f"  [{'; '.join(details)}]" if details else "")
            request.config._acceptance_lines.append(line)
            print(line)
            raise
        line = f"CRITERION {number:>2} PASS  {title}" + (f"  [{'; '.join(details)}]" if details else "")
        request.config._acceptance_lines.append(line)
        print(line)

    return run


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
