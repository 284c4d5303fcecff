import os
import sys

import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("suite", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("suite")


@pytest.fixture(scope="session", autouse=True)
def _no_elbo_decreases_anywhere():
    """Every VEM run in the suite must keep its ELBO trace non-decreasing."""
    from jointsbm import vem

    yield
    assert vem.MONOTONICITY_VIOLATIONS == [], (
        f"ELBO decreased beyond tolerance in {len(vem.MONOTONICITY_VIOLATIONS)} runs: "
        f"{vem.MONOTONICITY_VIOLATIONS[:5]}"
    )
