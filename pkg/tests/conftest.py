import numpy as np
import pytest

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            num, title = m.args
            _criteria.setdefault(num, {"title": title, "ok": True, "ran": False})


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is None or rep.when not in ("setup", "call"):
        return
    entry = _criteria[m.args[0]]
    if rep.when == "call":
        entry["ran"] = True
    if rep.failed or rep.skipped:
        entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for num in sorted(_criteria):
        e = _criteria[num]
        status = "PASS" if e["ok"] and e["ran"] else "FAIL"
        tr.write_line(f"criterion {num:2d}: {status}  {e['title']}")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
