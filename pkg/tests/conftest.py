import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from curveflow import coupling, net

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_gen():
    return net.init_params([2 + 2 * 3, 16, 16, 2], 3, seed=7)


@pytest.fixture
def small_enc():
    # random (non-zero) last layer so the coupling is not the prior
    return coupling.init_encoder(2, [8], seed=11, zero_output=False)


def central_fd(f, vec, h=1e-6):
    g = np.zeros_like(vec)
    for i in range(len(vec)):
        e = np.zeros_like(vec)
        e[i] = h
        g[i] = (f(vec + e) - f(vec - e)) / (2 * h)
    return g


def rel_err(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-300))


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
