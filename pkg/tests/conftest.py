"""Shared fixtures; collects acceptance verdicts for the terminal summary."""

import pytest

_VERDICTS: list[tuple[str, bool, str]] = []


class Verdicts:
    def record(self, name: str, passed: bool, detail: str) -> None:
        _VERDICTS.append((name, passed, detail))
        print(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")


@pytest.fixture(scope="session")
def verdicts():
    return Verdicts()


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _VERDICTS:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
