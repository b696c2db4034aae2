import time

import numpy as np
import pytest

_CRITERIA = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def criterion(request):
    """Times an acceptance criterion and records it for the terminal summary."""
    marker = request.node.get_closest_marker("criterion")
    number, title, limit = marker.args
    start = time.perf_counter()
    state = {"detail": ""}
    yield state
    elapsed = time.perf_counter() - start
    _CRITERIA[request.node.nodeid] = (number, title, limit, elapsed, state["detail"])
    assert elapsed < limit, f"criterion {number} took {elapsed:.1f}s (limit {limit}s)"


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title, seconds): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when not in ("call", "teardown"):
        return
    key = item.nodeid
    status = item.stash.get(_status_key, None)
    if report.when == "call":
        status = "SKIP" if report.skipped else ("PASS" if report.passed else "FAIL")
    elif report.failed:
        status = "FAIL"
    item.stash[_status_key] = status
    item.config.stash.setdefault(_lines_key, {})[key] = (marker.args, status)


_status_key = pytest.StashKey[str]()
_lines_key = pytest.StashKey[dict]()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_lines_key, {})
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for key, ((number, title, limit), status) in sorted(lines.items(), key=lambda kv: kv[1][0][0]):
        timing = _CRITERIA.get(key)
        took = f"{timing[3]:.1f}s/{limit}s" if timing else f"-/{limit}s"
        detail = f"  {timing[4]}" if timing and timing[4] else ""
        terminalreporter.write_line(f"criterion {number:>2} {status:4} {title} ({took}){detail}")
