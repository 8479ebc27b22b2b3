import numpy as np
import pytest

from maskdiff.oracle import BigramSource, joint_from_bigram

ACCEPTANCE_LINES: list = []


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def bigram_joint():
    src = BigramSource([0.7, 0.3], [[0.9, 0.1], [0.2, 0.8]])
    return joint_from_bigram(src, 3)


@pytest.fixture
def random_joint():
    return joint_from_bigram(BigramSource.random(3, np.random.default_rng(7)), 3)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split(":")[0].split()[-1])):
            terminalreporter.write_line(line)
