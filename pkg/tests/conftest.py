import itertools
import sys

import numpy as np
import pytest
from hypothesis import settings

from cellassembly.model import ModelParams

settings.register_profile("ci", max_examples=60, deadline=None)
settings.load_profile("ci")


def random_model(rng, N, M, lo=0.05, hi=0.95, q=None):
    """Model with probabilities drawn uniformly inside ``[lo, hi]`` (away from clamps)."""
    P = rng.uniform(lo, hi, (N, M))
    R = rng.uniform(lo, hi, N)
    Q = rng.uniform(0.05, 0.5) if q is None else q
    return ModelParams.from_probs(P, R, Q)


def all_binary(n):
    return np.array(list(itertools.product([0, 1], repeat=n)), dtype=np.int8)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "ACCEPTANCE_LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
