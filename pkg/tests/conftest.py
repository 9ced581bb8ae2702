import os
import sys
import warnings

import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture(autouse=True)
def _quiet_rayleigh():
    from tapertrap.trap_model import RayleighValidityWarning

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RayleighValidityWarning)
        yield


# acceptance lines ("criterion N: PASS/FAIL ...") collected by test_acceptance
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: (int(s.split()[1].rstrip(":").rstrip("abcd")), s)):
            terminalreporter.write_line(line)
