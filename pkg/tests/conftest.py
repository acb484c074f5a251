import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    report = getattr(module, "REPORT", None)
    if report:
        terminalreporter.section("acceptance criteria")
        for number in sorted(report):
            terminalreporter.write_line(report[number])
