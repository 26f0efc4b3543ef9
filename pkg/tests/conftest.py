import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

FIXTURE_LINES = [
    "the match ended in a late goal __label__sports",
    "shares fell after the earnings call __label__business",
    "the striker scored twice in the derby __label__sports",
    "the bank raised its profit forecast __label__business",
]


@pytest.fixture
def fixture_file(tmp_path):
    p = tmp_path / "fixture.txt"
    p.write_text("\n".join(FIXTURE_LINES) + "\n")
    return p


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is not None and mod.LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
