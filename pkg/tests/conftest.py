"""Shared fixtures: solved couplings are expensive, so they are session-scoped."""

import numpy as np
import pytest

from bridgecert.grids import Grid1D
from bridgecert.scenarios import RunContext, bundled_scenario_path, load_scenario


@pytest.fixture(scope="session")
def grid512():
    return Grid1D(-8.0, 8.0, 512)


def _context(name: str) -> RunContext:
    return RunContext(load_scenario(bundled_scenario_path(name)))


@pytest.fixture(scope="session")
def gaussian_ctx():
    ctx = _context("gaussian_T1")
    ctx.state  # force the solve once
    return ctx


@pytest.fixture(scope="session")
def cosine_ctx():
    ctx = _context("cosine_T1")
    ctx.state
    return ctx


@pytest.fixture(scope="session")
def doublewell_ctx():
    ctx = _context("doublewell_T1")
    ctx.state
    return ctx


GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0  # quadratic ansatz coefficient for T = 1
