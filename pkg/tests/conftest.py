from __future__ import annotations

from pathlib import Path

import pytest

from spphbt.kinetics import RateSet

# One verdict line per acceptance criterion, filled in by test_acceptance.py
# and echoed after the test summary so a plain `pytest` run shows them.
ACCEPTANCE_LINES: dict[str, str] = {}


def record_criterion(label: str, passed: bool, detail: str) -> None:
    status = "PASS" if passed else "FAIL"
    ACCEPTANCE_LINES[label] = f"[{status}] criterion {label}: {detail}"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    lines = [ACCEPTANCE_LINES[k] for k in sorted(ACCEPTANCE_LINES)]
    terminalreporter.section("acceptance criteria")
    for line in lines:
        terminalreporter.write_line(line)
    (Path(config.rootpath) / "acceptance_report.txt").write_text("\n".join(lines) + "\n")


@pytest.fixture(scope="session")
def silver_rates() -> RateSet:
    return RateSet.from_lifetimes(tau12=27.0, tau21=9.7, tau23=27.4, tau31=102.0)


@pytest.fixture(scope="session")
def glass_rates() -> RateSet:
    return RateSet.from_lifetimes(tau12=51.0, tau21=60.0, tau23=23.0, tau31=300.0)
