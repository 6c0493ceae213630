import pytest

from predictive_enforcement.hjb_solver import solve_cutoff
from predictive_enforcement.validation import reference_params


@pytest.fixture(scope="session")
def ref():
    return reference_params()


@pytest.fixture(scope="session")
def ref_policy(ref):
    return solve_cutoff(ref)
