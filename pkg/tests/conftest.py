"""Collects measured values from the acceptance suite for the terminal summary."""

MEASURED: list[tuple[str, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not MEASURED:
        return
    terminalreporter.section("acceptance measurements")
    for name, text in MEASURED:
        terminalreporter.write_line(f"{name}: {text}")
