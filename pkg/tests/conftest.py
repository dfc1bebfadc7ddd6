import time

import pytest

# Wall-clock budget for the whole suite, checked in the acceptance summary.
SUITE_BUDGET_S = 120.0

_results: dict[str, list[bool]] = {}
_titles: dict[str, str] = {}
_start = time.perf_counter()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(num, title): acceptance criterion covered by the test")


def pytest_runtest_setup(item):
    m = item.get_closest_marker("criterion")
    if m is not None:
        num, title = m.args
        _titles[str(num)] = title
        item.user_properties.append(("criterion", str(num)))


def pytest_runtest_logreport(report):
    crit = dict(report.user_properties).get("criterion")
    if crit is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _results.setdefault(crit, []).append(report.outcome == "passed")


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    elapsed = time.perf_counter() - _start
    tr = terminalreporter
    tr.section("acceptance criteria")
    for crit in sorted(_results, key=int):
        ok = all(_results[crit])
        note = ""
        if crit == "9":
            within = elapsed < SUITE_BUDGET_S
            ok = ok and within
            note = f" (suite wall time {elapsed:.1f}s, budget {SUITE_BUDGET_S:.0f}s)"
        tr.write_line(f"criterion {crit}: {'PASS' if ok else 'FAIL'}  {_titles.get(crit, '')}{note}")


@pytest.fixture
def criterion_note(record_property):
    """Attach a free-form measurement to the test report."""

    def note(**kw):
        for k, v in kw.items():
            record_property(k, v)

    return note
