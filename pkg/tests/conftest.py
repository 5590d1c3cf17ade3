import numpy as np
import pytest

from mitoslice.data import DatasetManifest, SampleRecord

_criteria: dict[int, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    num, title = mark.args
    entry = _criteria.setdefault(num, {"title": title, "ok": True, "ran": False})
    if rep.when == "call":
        entry["ran"] = True
    if rep.failed:
        entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_criteria):
        e = _criteria[num]
        status = "PASS" if e["ok"] and e["ran"] else ("FAIL" if not e["ok"] else "SKIP")
        terminalreporter.write_line(f"[{status}] AC{num:>2}: {e['title']}")


def make_manifest(labels, domains=None):
    domains = domains or ["0"] * len(labels)
    return DatasetManifest(
        [SampleRecord(f"s{i:04d}", f"images/s{i:04d}.png", int(y), str(d), f"c{i}")
         for i, (y, d) in enumerate(zip(labels, domains))]
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
