import re
from collections import OrderedDict

_CRITERIA = OrderedDict()


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)", report.nodeid)
    if not m:
        return
    if report.when == "call" or report.failed:
        n = int(m.group(1))
        entry = _CRITERIA.setdefault(n, {"ok": True, "details": []})
        entry["ok"] &= report.passed
        detail = dict(report.user_properties).get("detail")
        if detail:
            entry["details"].append(detail)
        elif report.failed:
            entry["details"].append(f"{report.when} failed")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        entry = _CRITERIA[n]
        status = "PASS" if entry["ok"] else "FAIL"
        terminalreporter.write_line(f"{status} criterion {n:2d}: " + "; ".join(entry["details"]))
