import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

from sdflow.assembly import StepUnknowns  # noqa: E402
from sdflow.geometry import Curve, make_ellipse  # noqa: E402


def random_state(m=12, seed=0, step=0.02):
    """A perturbed ellipse, a nearby guess and random curvature values."""
    rng = np.random.default_rng(seed)
    base = make_ellipse(2.0, 1.0, m).nodes
    prev = Curve(base + 0.05 * rng.standard_normal(base.shape))
    guess = StepUnknowns(prev.nodes + step * rng.standard_normal(base.shape),
                         rng.standard_normal(m), 0.3 * rng.standard_normal(m))
    return prev, guess


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def unit_square():
    return Curve([(0, 0), (1, 0), (1, 1), (0, 1)])


#: (criterion, passed or None for informational lines, detail), filled by test_acceptance
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        tag = "INFO" if ok is None else ("PASS" if ok else "FAIL")
        terminalreporter.write_line(f"{tag}  {name}: {detail}")
