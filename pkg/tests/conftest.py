import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from stabaudit.model import ScoreSchema  # noqa: E402

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture
def disc_schema():
    return ScoreSchema.uniform("Humantic-like", ("Dominance", "Influence", "Steadiness", "Calculativeness"), 0, 10)


@pytest.fixture
def simplex_schema():
    return ScoreSchema.uniform("Crystal-like", ("Dominance", "Influence", "Steadiness", "Conscientiousness"), 0, 100, 100)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    lines = getattr(acceptance, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
