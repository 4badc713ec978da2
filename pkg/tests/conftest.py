import itertools

import numpy as np
import pytest
from hypothesis import settings

from fusionopt import instance

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


def enumerate_objectives(inst, s=None):
    """Oracle: objective of every s-subset straight from logdet(C + A_S A_S^T)."""
    s = inst.s if s is None else s
    out = {}
    for S in itertools.combinations(range(inst.n), s):
        As = inst.A[:, list(S)]
        out[S] = float(np.linalg.slogdet(inst.C + As @ As.T)[1])
    return out


def optimum(inst):
    vals = enumerate_objectives(inst)
    z = max(vals.values())
    return z, [S for S, v in vals.items() if v >= z - 1e-9]


def random_instance(seed, d_range=(3, 8), n_range=(6, 10), s=None):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(d_range[0], d_range[1] + 1))
    n = int(rng.integers(n_range[0], n_range[1] + 1))
    if s is None:
        s = int(rng.integers(1, n))
    return instance.gen_random(d, n, min(s, n), seed)


@pytest.fixture
def small_inst():
    return instance.gen_random(4, 8, 3, seed=7)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
