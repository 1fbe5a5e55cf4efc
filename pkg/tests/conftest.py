import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gesa.corpus import PLC, ClozeInstance, Mention  # noqa: E402


def labour_instance():
    """Labour@s0, Ed Balls@s1, Labour@s1, VAT@s1."""
    return ClozeInstance(
        id="labour",
        question_tokens=["the", PLC, "opposed", "the", "VAT", "rise"],
        sentences=[["Labour", "won", "."], ["Ed", "Balls", "of", "Labour", "criticised", "VAT", "."]],
        mentions=[Mention("Labour", 0, 0, 1), Mention("Ed Balls", 1, 0, 2),
                  Mention("Labour", 1, 3, 4), Mention("VAT", 1, 5, 6)],
        candidates=[0, 1, 2, 3],
        gold_answers=["Ed Balls"],
    )


@pytest.fixture
def labour():
    return labour_instance()


@pytest.fixture
def rex():
    return ClozeInstance("rex", ["the", PLC, "won"], [["Rex", "barked"]], [Mention("Rex", 0, 0, 1)], [0], ["Rex"])


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
