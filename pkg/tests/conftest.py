"""Shared fixtures: the academic ensemble, its continuum fit and the flow-waveform ODE."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from contobs.fit import run_algorithm1
from contobs.model import synthetic_waveform
from contobs.scenarios import academic_ensemble

settings.register_profile("repo", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("repo")

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def academic():
    return academic_ensemble()


@pytest.fixture(scope="session")
def academic_params(academic):
    params, _ = run_algorithm1(academic, 3, 1, adaptive=False)
    return params


@pytest.fixture(scope="session")
def academic_ode():
    return synthetic_waveform("flow", 1e3)


@pytest.fixture(scope="session")
def acceptance_lines():
    return ACCEPTANCE_LINES


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
