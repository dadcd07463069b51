import pytest

_RESULTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_RESULTS] = {}


@pytest.fixture
def criterion(request):
    """``criterion(n, ok, detail)`` records one acceptance line and fails the test if not ok."""
    results = request.config.stash[_RESULTS]

    def report(number: int, ok: bool, detail: str):
        results[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}"
        assert ok, results[number]

    return report


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash[_RESULTS]
    if results:
        terminalreporter.write_sep("=", "acceptance")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
