import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def gen():
    return np.random.default_rng(1234)


def crandn(gen, shape, var=1.0):
    return np.sqrt(var / 2) * (gen.standard_normal(shape) + 1j * gen.standard_normal(shape))


# one summary line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE = {}


def record_acceptance(letter: str, status: str, detail: str) -> None:
    ACCEPTANCE[letter] = (status, detail)
    print(f"ACCEPTANCE {letter}: {status} - {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for letter in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[letter]
        terminalreporter.write_line(f"{letter}: {status} - {detail}")
