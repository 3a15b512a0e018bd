import pytest
from hypothesis import settings

from hybridpar import data_path, load_cluster, load_model

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    marker = _criteria.get(report.nodeid)
    if marker is None:
        return
    number, title = marker
    _criteria[report.nodeid] = (number, title, "PASS" if report.passed else "FAIL")


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            _criteria[item.nodeid] = tuple(m.args)


def pytest_terminal_summary(terminalreporter):
    merged = {}
    for entry in _criteria.values():
        if len(entry) != 3:
            continue
        number, title, outcome = entry
        prev = merged.get(number, (title, "PASS"))[1]
        merged[number] = (title, "FAIL" if "FAIL" in (prev, outcome) else "PASS")
    if not merged:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(merged):
        title, outcome = merged[number]
        terminalreporter.write_line(f"{outcome} criterion {number}: {title}")


@pytest.fixture(scope="session")
def bert32():
    return load_model(data_path("models", "bert-huge-32.json"))


@pytest.fixture(scope="session")
def cluster8():
    return load_cluster(data_path("clusters", "rtx-titan-8.json"))
