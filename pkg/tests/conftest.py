import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

_criteria = []


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    props = dict(report.user_properties)
    _criteria.append((report.nodeid.split("::")[-1], report.passed, props.get("measured", "")))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, measured in sorted(_criteria):
        num = name.split("_")[2]
        label = " ".join(name.split("_")[3:])
        line = f"criterion {int(num):>2} {'PASS' if passed else 'FAIL'}  {label}"
        if measured:
            line += f"  [{measured}]"
        terminalreporter.write_line(line)
