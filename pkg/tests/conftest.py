import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from voxgen import tensor as T  # noqa: E402

CRITERIA: dict[int, str] = {}


def record_criterion(number: int, title: str, passed: bool, detail: str = "") -> None:
    line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}" + (f"  ({detail})" if detail else "")
    CRITERIA[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])


@pytest.fixture
def f64():
    with T.precision(np.float64):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def fitted_toy():
    """Quadrature toy with a recognizer fitted to the frozen generator (shared by several tests)."""
    from toy import fit_recognizer, toy_model

    return fit_recognizer(toy_model(0, gain=4.0), steps=3000)
