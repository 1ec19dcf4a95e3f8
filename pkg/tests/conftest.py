from __future__ import annotations

import numpy as np
import pytest

from tolerant_gof.models import RandomStream


@pytest.fixture
def rng():
    return RandomStream(20240611, 0)


def gh_nodes(n=200):
    """Probabilists' Gauss-Hermite rule: sum w f(x) = E f(Z)."""
    x, w = np.polynomial.hermite_e.hermegauss(n)
    return x, w / np.sqrt(2 * np.pi)


@pytest.fixture
def criterion(request):
    """record(n, ok, detail) stores one acceptance line for the run summary."""
    lines = request.config.__dict__.setdefault("_acceptance_lines", {})

    def record(n, ok, detail):
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines[n] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.__dict__.get("_acceptance_lines")
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
