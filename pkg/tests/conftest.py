"""Collects acceptance-criterion outcomes and prints one line per criterion."""

import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion check")


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    key = props["criterion"]
    if report.when == "call" or report.outcome != "passed":
        # setup failures count against the criterion too
        _RESULTS[key] = (report.outcome == "passed", props.get("title", ""), props.get("measured", ""))


@pytest.fixture(autouse=True)
def _tag_criterion(request, record_property):
    marker = request.node.get_closest_marker("criterion")
    if marker is not None:
        record_property("criterion", marker.args[0])
        record_property("title", marker.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_RESULTS):
        ok, title, measured = _RESULTS[key]
        line = f"criterion {key:>2}: {'PASS' if ok else 'FAIL'}  {title}"
        if measured:
            line += f"  [{measured}]"
        terminalreporter.write_line(line)
