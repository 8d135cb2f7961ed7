"""Collects the one-line acceptance verdicts and prints them after the run."""

VERDICTS: list[str] = []


def record(criterion: str, passed: bool, detail: str) -> bool:
    line = f"{criterion} {'PASS' if passed else 'FAIL'}  {detail}"
    VERDICTS.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance")
        for line in VERDICTS:
            terminalreporter.write_line(line)
