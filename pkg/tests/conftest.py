import pytest

_RESULTS = pytest.StashKey[dict]()


@pytest.fixture()
def record_criterion(request):
    """Log one pass/fail line for an acceptance criterion, then assert it."""
    results = request.config.stash.setdefault(_RESULTS, {})

    def record(number, title, ok, detail=""):
        results[number] = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
        assert ok, f"criterion {number} failed: {detail}"

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_RESULTS, {})
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
