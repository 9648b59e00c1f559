"""Shared fixtures; long Frank-Wolfe runs are computed once per session."""

from __future__ import annotations

import time

import numpy as np
import pytest

from dmcvqkd import FwOptions, HonestChannel, ModulationScheme, solve_instance
from dmcvqkd.finite_rate import DEFAULT_ALPHA_GRID, asymptotic_rate
from dmcvqkd.honest_model import ec_leak_rate

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def acceptance_log():
    def record(number: int, passed: bool, detail: str) -> None:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
    return record


def solve_rate(alpha, distance_km, excess_noise, cutoff, f_ec=0.0, **fw):
    scheme = ModulationScheme(alpha, cutoff=cutoff)
    channel = HonestChannel(distance_km, 0.2, excess_noise)
    start = time.perf_counter()
    res = solve_instance(scheme, channel, FwOptions(**fw))
    rate = asymptotic_rate(res.certificate, res.stats, ec_leak_rate(res.stats.ec, f_ec))
    return {"result": res, "rate": rate, "scheme": scheme, "channel": channel,
            "seconds": time.perf_counter() - start}


@pytest.fixture(scope="session")
def production_run():
    """alpha 0.9, xi 2 %, 10 km, cutoff 10, default stopping rule."""
    return solve_rate(0.9, 10.0, 0.02, 10)


@pytest.fixture(scope="session")
def alpha_sweep_10km():
    """Rates over the default amplitude grid at 10 km, xi 2 %, f = 0."""
    return {a: solve_rate(a, 10.0, 0.02, 10, gap=1e-3) for a in DEFAULT_ALPHA_GRID}


@pytest.fixture(scope="session")
def distance_sweep():
    """Best rate over a coarse amplitude grid at 25-100 km (reduced budget)."""
    out = {}
    for d in (25.0, 50.0, 75.0, 100.0):
        runs = [solve_rate(a, d, 0.02, 10, gap=1e-5, max_iter=150) for a in (0.6, 0.7, 0.8)]
        out[d] = max(runs, key=lambda r: r["rate"])
    return out


@pytest.fixture(scope="session")
def finite_instance():
    """Certificate for the finite-size anchor: xi 1 %, 10 km, alpha 0.9."""
    return solve_rate(0.9, 10.0, 0.01, 10, f_ec=0.01, gap=1e-5)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
