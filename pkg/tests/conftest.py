"""Shared fixtures and the acceptance-summary reporting hook."""

import numpy as np
import pytest

from histotex import random_filter_bank

# Acceptance tests append one "[PASS]/[FAIL] criterion N: ..." line each;
# the terminal-summary hook prints them after the run.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_net():
    """Tiny 2-block filter bank, cheap enough for dense finite differences."""
    return random_filter_bank(7, (3, 4, 8))


@pytest.fixture(scope="session")
def stripes_64():
    """Procedural 3x64x64 exemplar with structure at several scales."""
    yy, xx = np.mgrid[0:64, 0:64]
    img = np.stack([
        (np.sin(xx / 4.0) + 1.0) / 2.0,
        ((xx // 8 + yy // 8) % 2).astype(float),
        (np.sin((xx + yy) / 6.0) + 1.0) / 2.0,
    ])
    return np.clip(img, 0.0, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
