import pytest

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    entry = _CRITERIA.setdefault(number, {"title": title, "passed": True, "ran": False, "failed": [], "details": []})
    if rep.when == "call":
        entry["details"].extend(v for k, v in rep.user_properties if k == "measured")
    if rep.when == "call" or rep.failed:
        entry["ran"] = True
        if rep.failed:
            entry["passed"] = False
            entry["failed"].append(item.name)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        e = _CRITERIA[number]
        status = "PASS" if e["passed"] and e["ran"] else ("FAIL" if e["ran"] else "SKIP")
        extra = f"  (failed: {', '.join(e['failed'])})" if e["failed"] else ""
        if e["details"]:
            extra += f"  [{'; '.join(e['details'])}]"
        terminalreporter.write_line(f"criterion {number:>2}: {status}  {e['title']}{extra}")
