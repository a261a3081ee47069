import time

ACCEPTANCE_LINES: dict[int, str] = {}
SUITE_LIMIT_SECONDS = 600.0
_session_start = time.perf_counter()


def record_acceptance(number: int, passed: bool, detail: str) -> str:
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line, flush=True)
    return line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    elapsed = time.perf_counter() - _session_start
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        line = ACCEPTANCE_LINES[number]
        if number == 6:
            within = elapsed <= SUITE_LIMIT_SECONDS
            if not within:
                line = line.replace(": PASS |", ": FAIL |", 1)
            line += f"; whole session {elapsed:.0f} s (limit {SUITE_LIMIT_SECONDS:.0f} s)"
        tr.write_line(line)
