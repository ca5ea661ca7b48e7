"""Shared pytest plumbing: the acceptance verdict table."""
import pytest

ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def verdict():
    """Record ``(number, name, passed, detail)`` for the acceptance summary."""

    def record(number: int, name: str, passed: bool, detail: str = "") -> bool:
        ACCEPTANCE[number] = (name, bool(passed), detail)
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        name, passed, detail = ACCEPTANCE[number]
        line = f"[{'PASS' if passed else 'FAIL'}] {number:2d}. {name}"
        terminalreporter.write_line(f"{line}: {detail}" if detail else line)
