"""Collects the acceptance verdicts and prints them after the run."""

ACCEPTANCE = {}


def record(key, passed, detail):
    ACCEPTANCE[key] = (bool(passed), detail)
    line = f"ACCEPTANCE {key}: {'PASS' if passed else 'FAIL'} - {detail}"
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"ACCEPTANCE {key}: {'PASS' if passed else 'FAIL'} - {detail}")
