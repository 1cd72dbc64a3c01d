"""Shared test configuration.

Keeps numpy single-threaded for reproducible timing and collects the
acceptance-criterion verdicts so the run ends with one pass/fail line per
criterion regardless of output capture.  The full-suite runtime bound that
belongs to criterion 9 is enforced here at session end, where the true
elapsed time is known.
"""

import time

import threadpoolctl

_limiter = threadpoolctl.threadpool_limits(limits=1)

SUITE_BUDGET_SECONDS = 15 * 60
_session_start = time.monotonic()

# criterion number -> (description, passed, detail)
CRITERIA: dict = {}


def record_criterion(number: int, description: str, passed: bool, detail: str = ""):
    """Log a criterion verdict; the terminal summary prints one line each."""
    CRITERIA[number] = (description, bool(passed), detail)
    suffix = f" ({detail})" if detail else ""
    print(f"criterion {number} [{'PASS' if passed else 'FAIL'}] {description}{suffix}")
    assert passed, f"criterion {number} failed: {description}{suffix}"


def pytest_sessionfinish(session, exitstatus):
    elapsed = time.monotonic() - _session_start
    if 9 in CRITERIA:
        description, passed, detail = CRITERIA[9]
        runtime_ok = elapsed < SUITE_BUDGET_SECONDS
        detail = (f"{detail}; suite {elapsed:.0f}s "
                  f"{'<' if runtime_ok else '>='} {SUITE_BUDGET_SECONDS}s budget")
        CRITERIA[9] = (description, passed and runtime_ok, detail)
        if passed and not runtime_ok:
            session.exitstatus = 1


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        description, passed, detail = CRITERIA[number]
        verdict = "PASS" if passed else "FAIL"
        suffix = f" ({detail})" if detail else ""
        terminalreporter.write_line(
            f"criterion {number} [{verdict}] {description}{suffix}")
