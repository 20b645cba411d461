_ACCEPTANCE_LINES = []


def record_criterion(number, passed, detail=""):
    tag = "PASS" if passed else "FAIL"
    _ACCEPTANCE_LINES.append((number, f"criterion {number:>2}: {tag}  {detail}"))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
