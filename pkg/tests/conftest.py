import pathlib
import re

import pytest

TESTS_DIR = pathlib.Path(__file__).parent
FIXTURES_DIR = TESTS_DIR / "fixtures"
REPORTS_DIR = FIXTURES_DIR / "reports"


@pytest.fixture
def reports_dir() -> pathlib.Path:
    return REPORTS_DIR


@pytest.fixture
def fixtures_dir() -> pathlib.Path:
    return FIXTURES_DIR


_CRITERION_RE = re.compile(r"test_criterion_(\d+)_([a-z0-9_]+)")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Print one pass/fail line per acceptance criterion after the run."""
    lines = {}
    for state in ("passed", "failed", "error", "skipped"):
        for report in terminalreporter.stats.get(state, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance.py" not in nodeid:
                continue
            m = _CRITERION_RE.search(nodeid)
            if not m:
                continue
            number = int(m.group(1))
            label = m.group(2).replace("_", "-")
            if state == "passed":
                verdict = "PASS"
            elif state == "skipped":
                reason = ""
                if isinstance(report.longrepr, tuple):
                    reason = report.longrepr[2]
                reason = reason.replace("Skipped: ", "")
                verdict = f"SKIP ({reason})" if reason else "SKIP"
            else:
                verdict = "FAIL"
            # Keep the worst verdict if a criterion spans several reports.
            if lines.get(number, ("", "PASS"))[1] != "FAIL":
                lines[number] = (label, verdict)
    if not lines:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(lines):
        label, verdict = lines[number]
        terminalreporter.write_line(f"[criterion {number}] {label}: {verdict}")
