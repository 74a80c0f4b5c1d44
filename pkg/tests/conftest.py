from __future__ import annotations

import os

import numpy as np
import pytest

from sparsex.core import DesignMatrix


def pytest_collection_modifyitems(config, items):
    if os.environ.get("SPARSEX_PAPER_SCALE") == "1":
        return
    skip = pytest.mark.skip(reason="paper-scale run; set SPARSEX_PAPER_SCALE=1")
    for item in items:
        if "paper_scale" in item.keywords:
            item.add_marker(skip)


def random_instance(seed, n, d, *, residual_scale=1.0):
    """Gaussian X and residual r for selector tests."""
    rng = np.random.default_rng(seed)
    X = DesignMatrix.from_array(rng.standard_normal((n, d)))
    r = residual_scale * rng.standard_normal(n)
    return X, r


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list = []


def report(criterion, ok, detail):
    """Record one acceptance line; it is echoed in the terminal summary."""
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
