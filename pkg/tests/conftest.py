from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def gpd_sample(gamma: float, sigma: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF draws from GPD(gamma, sigma)."""
    u = rng.random(n)
    if gamma == 0:
        return -sigma * np.log(u)
    return sigma / gamma * (u ** -gamma - 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
