import pytest

_criteria: dict[int, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if report.when == "call" or report.failed:
        status = "PASS" if report.passed else "FAIL"
        if _criteria.get(number, ("", "PASS"))[1] == "PASS":
            _criteria[number] = (title, status)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, status = _criteria[number]
        terminalreporter.write_line(f"criterion {number:2d} {status}: {title}")
