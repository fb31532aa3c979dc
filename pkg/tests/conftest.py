"""Shared pytest hooks.

Acceptance tests record one PASS/FAIL line each; the hook below repeats
those lines in the terminal summary so they are visible even when pytest
captures per-test stdout.
"""

ACCEPTANCE_LINES = []


def record_acceptance(number: int, passed: bool, description: str) -> str:
    line = f"ACCEPTANCE {number:2d}: {'PASS' if passed else 'FAIL'} - {description}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return line


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
