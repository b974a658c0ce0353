"""Shared pytest hooks: acceptance-criterion summary lines.

Tests marked @pytest.mark.criterion(n, "label") are collected into a
one-line-per-criterion pass/fail table printed after the normal pytest
summary, so a full run ends with an explicit verdict for every gate.
"""

_criteria = {}
_results = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers",
        "criterion(num, label): acceptance gate this test realizes")


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            _criteria[item.nodeid] = (int(m.args[0]), str(m.args[1]))


def pytest_runtest_logreport(report):
    info = _criteria.get(report.nodeid)
    if info is None:
        return
    num, label = info
    if report.when == "call":
        outcome = "PASS" if report.passed else "FAIL"
    elif report.when == "setup" and (report.failed or report.skipped):
        outcome = "FAIL" if report.failed else "SKIP"
    else:
        return
    # A criterion realized by several tests fails if any of them fails.
    prev = _results.get(num)
    if prev is not None and prev[1] == "FAIL":
        return
    _results[num] = (label, outcome)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_results):
        label, outcome = _results[num]
        terminalreporter.write_line(
            "criterion %2d  %-58s %s" % (num, label, outcome))
