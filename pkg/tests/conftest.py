import os

import pytest
from hypothesis import HealthCheck, settings

from clutter_vi.model import ClutterModel

settings.register_profile("default", max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=50, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# criterion id -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE_REPORT: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def default_model():
    return ClutterModel(w=0.5, clutter_mean=0.0, clutter_var=10.0, v_g=1.0, prior_mean=0.0, prior_var=100.0)


@pytest.fixture
def conjugate_model():
    return ClutterModel(w=0.0, clutter_mean=0.0, clutter_var=10.0, v_g=1.0, prior_mean=0.0, prior_var=100.0)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_REPORT, key=lambda k: int(k.split()[0])):
        ok, detail = ACCEPTANCE_REPORT[key]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {key}: {detail}")
