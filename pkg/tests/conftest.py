import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from twoscale import config as cfg  # noqa: E402
from twoscale.macro_sim import homogenize_config  # noqa: E402


@pytest.fixture(scope="session")
def default_config():
    return cfg.load_config(cfg.DEFAULT_CONFIG)


@pytest.fixture(scope="session")
def default_cell(default_config):
    return homogenize_config(default_config)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record a one-line verdict for an acceptance criterion, then assert it."""

    def record(number: int, ok: bool, detail: str):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
