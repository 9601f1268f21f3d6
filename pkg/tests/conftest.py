"""Per-criterion pass/fail reporting for the acceptance suite.

Tests marked ``@pytest.mark.criterion(n, "name")`` get one summary line
each at the end of the session.  A test can attach measured values through
the ``criterion_detail`` fixture.
"""

import pytest

_RESULTS = pytest.StashKey[dict]()
_DETAILS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, name): acceptance criterion")
    config.stash[_RESULTS] = {}
    config.stash[_DETAILS] = {}


@pytest.fixture
def criterion_detail(request):
    details = request.config.stash[_DETAILS]

    def note(text: str) -> None:
        details.setdefault(request.node.nodeid, []).append(text)

    return note


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when not in ("setup", "call"):
        return
    if rep.when == "setup" and rep.passed:
        return
    number, name = marker.args
    item.config.stash[_RESULTS][number] = (name, rep.passed, item.nodeid)


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_RESULTS, {})
    if not results:
        return
    details = config.stash.get(_DETAILS, {})
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        name, ok, nodeid = results[number]
        extra = "; ".join(details.get(nodeid, []))
        terminalreporter.write_line(f"criterion {number} ({name}): {'PASS' if ok else 'FAIL'}"
                                    + (f"  [{extra}]" if extra else ""))
