import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

# one verdict line per acceptance criterion, printed after the run
CRITERIA: dict[int, str] = {}


def record(number: int, ok: bool, detail: str) -> None:
    CRITERIA[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])
