import pytest

_results: dict = {}


def pytest_runtest_logreport(report):
    if "acceptance" not in report.keywords:
        return
    if report.when == "call" or report.outcome != "passed":
        name = report.nodeid.split("::")[-1]
        prev = _results.get(name, "PASS")
        _results[name] = "PASS" if prev == "PASS" and report.outcome == "passed" else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_results):
        terminalreporter.write_line(f"{_results[name]}  {name}")


@pytest.fixture
def rng():
    import numpy as np

    return np.random.default_rng(12345)
