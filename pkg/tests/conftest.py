import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", parent=settings.get_profile("default"), max_examples=300)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_homography(rng, cond_max=1e4):
    """A well-conditioned ground->image homography built from a random camera."""
    while True:
        h = rng.normal(size=(3, 3))
        h[2] = [rng.normal() * 0.05, rng.normal() * 0.05, 1.0 + abs(rng.normal())]
        if np.linalg.cond(h) < cond_max:
            return h


# one line per acceptance criterion, repeated after the run so it survives output capture
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
