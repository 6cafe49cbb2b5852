import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from tripletqubo.events import dedup_per_layer, generate_synthetic_event  # noqa: E402

settings.register_profile(
    "default", deadline=None, max_examples=50, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def clean_event():
    """50 noiseless particles."""
    return dedup_per_layer(generate_synthetic_event(50, 0.0, seed=11))


@pytest.fixture(scope="session")
def noisy_event():
    """200 particles with 10% noise."""
    return dedup_per_layer(generate_synthetic_event(200, 0.1, seed=3))


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is not None and acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(acceptance.RESULTS, key=lambda s: int(s.split("]")[1].split(".")[0])):
            terminalreporter.write_line(line)
