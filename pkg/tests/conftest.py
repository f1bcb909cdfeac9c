import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))


def pytest_terminal_summary(terminalreporter):
    report = getattr(sys.modules.get("test_acceptance"), "REPORT", None)
    if report:
        terminalreporter.section("acceptance criteria")
        for line in sorted(report, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
