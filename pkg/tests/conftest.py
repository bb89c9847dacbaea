import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from icr.model import fixture_path, load_distribution, load_model, make_variables
from icr.tensor import Distribution

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_joint(variables, rng, zeros=False):
    size = int(np.prod([v.cardinality for v in variables]))
    vals = rng.dirichlet(np.ones(size))
    if zeros:
        vals[rng.random(size) < 0.2] = 0.0
        if vals.sum() == 0:
            vals[0] = 1.0
        vals /= vals.sum()
    return Distribution.from_values(variables, (), vals)


def random_conditional(target, given, rng):
    nt = int(np.prod([v.cardinality for v in target]))
    ng = int(np.prod([v.cardinality for v in given]))
    vals = rng.dirichlet(np.ones(nt), size=ng).T
    return Distribution(target, given, vals.reshape([v.cardinality for v in target + given], order="F"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def fixture_model():
    return lambda name: load_model(fixture_path(name))


@pytest.fixture
def fixture_dist():
    return lambda name, m: load_distribution(fixture_path(name), m.variables)


@pytest.fixture
def xyz():
    return make_variables([("x", 2), ("y", 3), ("z", 2)])


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
