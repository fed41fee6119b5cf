"""Collects the acceptance verdicts and prints them after the test session."""

VERDICTS: dict[int, tuple[str, str, str]] = {}


def record(number: int, title: str, passed: bool, detail: str = "") -> None:
    VERDICTS[number] = ("PASS" if passed else "FAIL", title, detail)


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(VERDICTS):
        verdict, title, detail = VERDICTS[n]
        line = f"[{verdict}] criterion {n:2d}: {title}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
