import os

import hypothesis
import numpy as np
import pytest

from regionedit import models
from regionedit.masks import rect_mask
from regionedit.schedule import make_linear_schedule

hypothesis.settings.register_profile("default", max_examples=40, deadline=None)
hypothesis.settings.register_profile("ci", max_examples=200, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=5, deadline=None)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

np.seterr(all="raise", under="ignore")


@pytest.fixture(scope="session")
def sched():
    return make_linear_schedule(50)


@pytest.fixture(scope="session")
def mask8():
    return rect_mask(16, 16, 4, 4, 8, 8)


@pytest.fixture(scope="session")
def split_model(sched, mask8):
    return models.split_blob_model(sched, mask8.bits, s2=1.0)


@pytest.fixture(scope="session")
def tiny():
    return models.init_random(3, 16)


ACCEPTANCE: list[str] = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def report(n: int, ok: bool, detail: str):
        line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}: {detail}"
        ACCEPTANCE.append(line)
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
