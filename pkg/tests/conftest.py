import os

import pytest
from hypothesis import HealthCheck, settings

from voxrank.query import Lexicon

settings.register_profile("default", max_examples=100, deadline=None)
settings.register_profile("ci", max_examples=300, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def lexicon():
    return Lexicon.build(
        brands=["Great Value", "Horizon", "great value organic"],
        facets=["organic", "gluten free", "free", "low fat", "whole grain"],
    )


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
