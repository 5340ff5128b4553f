from fractions import Fraction
from pathlib import Path

import pytest
from hypothesis import settings

from qeverify.network import load_nnet

FIXTURES = Path(__file__).parent / "fixtures"

settings.register_profile("suite", deadline=None, max_examples=100, derandomize=True)
settings.load_profile("suite")


@pytest.fixture(scope="session")
def diamond():
    return load_nnet(FIXTURES / "diamond.nnet")


@pytest.fixture(scope="session")
def small5():
    return load_nnet(FIXTURES / "small5.nnet")


@pytest.fixture(scope="session")
def affine():
    return load_nnet(FIXTURES / "affine.nnet")


SMALL5_X0 = [Fraction(1, 10), Fraction(-1, 5), Fraction(3, 10)]


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
