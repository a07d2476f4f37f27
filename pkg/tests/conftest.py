import os
from pathlib import Path

import pytest

_ACCEPTANCE_LINES = []
# lines are also appended here as they are recorded, so partial runs keep them
RESULTS_FILE = Path(os.environ.get("HOLETRANSPORT_ACCEPTANCE_LOG", Path(__file__).parent.parent / "acceptance_results.txt"))


class AcceptanceLog:
    """Collects one pass/fail line per acceptance criterion for the terminal summary."""

    def record(self, label: str, checks: dict):
        # checks: clause -> (measured, ok, requirement)
        ok = all(c[1] for c in checks.values())
        parts = [f"{k}={_fmt(v)} [{req}{'' if good else ' FAIL'}]" for k, (v, good, req) in checks.items()]
        line = f"{'PASS' if ok else 'FAIL'} {label}: " + "; ".join(parts)
        _ACCEPTANCE_LINES.append(line)
        with open(RESULTS_FILE, "a") as fh:
            fh.write(line + "\n")
        return ok


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


@pytest.fixture(scope="session")
def acceptance_log():
    RESULTS_FILE.unlink(missing_ok=True)
    return AcceptanceLog()


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
