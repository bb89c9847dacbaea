"""Hand-checked values frozen from independent computations.

The numbers below were worked out outside the package (exact fractions or
30-digit mpmath) and pasted in; the tests only compare against them.
"""
import numpy as np
import pytest

from conftest import random_joint
from icr.baselines import gibbs_sample, power_iterate
from icr.engine import IcrConfig, project, run_icr, stationary_set
from icr.ensemble import model_deviance
from icr.model import (
    CsmModel,
    derive_csm_from_joint,
    fixture_path,
    load_distribution,
    load_model,
    make_variables,
)
from icr.tensor import Distribution, compose, condition, kl, marginalize, total_variation, uniform

# three-variable joint, numerators over 20, x1 fastest
JOINT_20 = [1, 3, 4, 2, 3, 3, 3, 1]

# 0.5 ln 2 + 0.5 ln(2/3)
BINARY_KL = 0.143841036225890463719609502997
# uniform joint scored against x1|x2,x3 of the joint above:
# sum over (x2, x3) of 1/4 * KL(f(.|x2,x3) || 1/2)
UNIFORM_DEVIANCE = 0.0795642710368516023063029778271


@pytest.fixture
def ex1():
    m = load_model(fixture_path("example1_full"))
    pi = load_distribution(fixture_path("example1_joint"), m.variables)
    return m, pi


def test_joint_fixture_matches_numerators(ex1):
    _, pi = ex1
    assert np.allclose(pi.values * 20, JOINT_20, atol=1e-14)


def test_pair_marginal(ex1):
    m, pi = ex1
    got = marginalize(pi, ["x1", "x2"]).values
    assert np.allclose(got, np.array([4, 6, 7, 3]) / 20, atol=1e-15)
    assert np.allclose(marginalize(pi, ["x3"]).values, [0.5, 0.5], atol=1e-15)


def test_binary_kl_closed_form():
    v = make_variables([("x", 2)])
    p = Distribution.from_values(v, (), [0.5, 0.5])
    q = Distribution.from_values(v, (), [0.25, 0.75])
    assert abs(kl(p, q).kl_forward - BINARY_KL) < 1e-15


def test_recompose_from_conditional_and_marginal(ex1):
    _, pi = ex1
    f = condition(pi, ["x2", "x3"])
    # x1 = 0 given x2 = x3 = 0 is 1 / (1 + 3)
    assert abs(f.values[0] - 0.25) < 1e-15
    back = compose(f, marginalize(pi, ["x2", "x3"]))
    assert np.allclose(back.values * 20, JOINT_20, atol=1e-13)


def test_projection_fixed_point(ex1):
    m, pi = ex1
    blk = next(b for b in m.blocks if b.id == "f1|23")
    assert total_variation(project(pi, blk), pi) < 1e-15


def test_uniform_mixture_deviance_against_one_block(ex1):
    m, pi = ex1
    blk = next(b for b in m.blocks if b.id == "f1|23")
    single = CsmModel(m.variables, (blk,))
    got = model_deviance(uniform(m.variables), single)
    assert abs(got - UNIFORM_DEVIANCE) < 1e-14


def test_saturated_three_way_members_equal_generator():
    rng = np.random.default_rng(17)
    v = make_variables([("x1", 2), ("x2", 3), ("x3", 2)])
    joint = random_joint(v, rng)
    m = derive_csm_from_joint(joint, [([u.name], [w.name for w in v if w is not u]) for u in v])
    r = run_icr(m, m.block_ids, IcrConfig(tol_m=1e-20, tol_pi=1e-20, init="block"))
    s = stationary_set(r)
    assert len(s.members) == 3
    for member in s.members:
        assert total_variation(member, joint) < 1e-10


def test_power_method_matches_icr_on_two_variables():
    rng = np.random.default_rng(23)
    v = make_variables([("x1", 3), ("x2", 4)])
    joint = random_joint(v, rng)
    m = derive_csm_from_joint(joint, [(["x1"], ["x2"]), (["x2"], ["x1"])])
    r = run_icr(m, m.block_ids, IcrConfig(tol_m=1e-20, tol_pi=1e-20))
    p = power_iterate(m, m.block_ids, tol=1e-20)
    assert total_variation(p.dist, r.slots[-1]) < 1e-8
    assert total_variation(p.dist, joint) < 1e-8


def test_gibbs_mean_error_inside_sampling_envelope():
    rng = np.random.default_rng(29)
    v = make_variables([("x1", 2), ("x2", 2)])
    joint = random_joint(v, rng)
    m = derive_csm_from_joint(joint, [(["x1"], ["x2"]), (["x2"], ["x1"])])
    n = 100_000
    tvs = []
    for seed in range(10):
        emp = gibbs_sample(m, m.block_ids, n, 1000, seed=seed).empirical(m.variables)
        tvs.append(total_variation(emp, joint))
    p = joint.values
    # mean absolute error of a binomial proportion is about sqrt(2 p (1-p) / (pi n))
    expected = 0.5 * np.sum(np.sqrt(2 * p * (1 - p) / (np.pi * n)))
    assert np.mean(tvs) < 3 * expected
