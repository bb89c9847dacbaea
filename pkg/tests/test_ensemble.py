import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from conftest import random_joint
from icr.engine import IcrConfig
from icr.ensemble import (
    FREEMAN_TUKEY,
    KL,
    PEARSON,
    Ensemble,
    collect_ensemble,
    ensemble_from_plan,
    grid_search,
    measure_name,
    model_deviance,
    optimize_mixture,
    project_simplex,
)
from icr.errors import ScopeError, SupportError, ValidationError
from icr.model import ConditionalBlock, CsmModel, fixture_path, load_distribution, load_model, make_variables
from icr.synthesis import load_plan
from icr.tensor import Distribution, condition

MEASURES = [KL, PEARSON, FREEMAN_TUKEY]


def brute_deviance(mix, m, measure):
    """Cell-by-cell deviance on dicts."""
    joint = oracles.to_dict(mix)
    total = 0.0
    for blk in m.blocks:
        a = {v.name for v in blk.target}
        b = {v.name for v in blk.predictors}
        f = oracles.to_dict(blk.table)
        ab = oracles.marginal(joint, a | b)
        pb = oracles.marginal(joint, b)
        for key, fv in f.items():
            w = pb[oracles.restrict(key, b)]
            if w == 0:
                continue
            c = ab[key] / w
            if measure == KL:
                term = fv * math.log(fv / c) if fv > 0 else 0.0
            elif measure == PEARSON:
                term = (fv - c) ** 2 / c if c > 0 else (math.inf if fv > 0 else 0.0)
            else:
                term = 4 * (math.sqrt(fv) - math.sqrt(c)) ** 2
            total += w * term
    return total


def incompatible_ensemble():
    m = load_model(fixture_path("example1_incompatible_full"))
    e = ensemble_from_plan(m, load_plan(fixture_path("example1_incompatible_plan")))
    return m, e


def random_model(rng):
    v = make_variables([("a", 2), ("b", 3), ("c", 2)])
    p, q = random_joint(v, rng), random_joint(v, rng)
    blocks = (
        ConditionalBlock("fa", condition(p, ["b", "c"])),
        ConditionalBlock("fb", condition(q, ["a", "c"])),
    )
    return v, CsmModel(v, blocks)


@given(seed=st.integers(0, 2**32 - 1), measure=st.sampled_from(MEASURES))
def test_deviance_matches_brute_force(seed, measure):
    rng = np.random.default_rng(seed)
    v, m = random_model(rng)
    mix = random_joint(v, rng)
    assert model_deviance(mix, m, measure) == pytest.approx(brute_deviance(mix, m, measure), rel=1e-10, abs=1e-14)


@pytest.mark.parametrize("measure", MEASURES)
def test_deviance_zero_at_generating_joint(measure):
    m = load_model(fixture_path("example1_full"))
    pi = load_distribution(fixture_path("example1_joint"), m.variables)
    assert abs(model_deviance(pi, m, measure)) < 1e-14


def test_deviance_support_rules():
    v = make_variables([("a", 2), ("b", 2)])
    f = Distribution.from_values([v[0]], [v[1]], [0.5, 0.5, 0, 0], allow_undefined=True)
    m = CsmModel(v, (ConditionalBlock("fa|b", f),), warnings=("quiet",))
    ok = Distribution.from_values(v, (), [0.5, 0.5, 0, 0])
    assert model_deviance(ok, m) == pytest.approx(0.0, abs=1e-15)
    bad = Distribution.from_values(v, (), [0.25] * 4)
    with pytest.raises(SupportError):
        model_deviance(bad, m)
    with pytest.raises(ScopeError):
        model_deviance(Distribution.from_values(v[:1], (), [0.5, 0.5]), m)


def test_measure_names():
    assert measure_name("x2") == PEARSON
    assert measure_name("f2") == FREEMAN_TUKEY
    with pytest.raises(ValidationError):
        measure_name("hellinger")


def test_incompatible_mixture_beats_members_and_matches_grid():
    m, e = incompatible_ensemble()
    assert len(e.members) == 2
    res = optimize_mixture(e, m)
    assert res.deviance <= res.member_deviances.min() + 1e-15
    gw, gf = grid_search(e, m)
    assert abs(res.deviance - gf) < 1e-6
    assert abs(res.weights[0] - gw[0]) < 1e-2
    assert res.deviance == pytest.approx(0.1100344, abs=1e-6)


@pytest.mark.parametrize("measure", [PEARSON, FREEMAN_TUKEY])
def test_other_measures_agree_with_grid(measure):
    m, e = incompatible_ensemble()
    res = optimize_mixture(e, m, measure)
    _, gf = grid_search(e, m, measure)
    assert res.deviance <= gf + 1e-6
    assert res.measure == measure


def test_compatible_fixture_has_zero_deviance():
    m = load_model(fixture_path("example2"))
    e = collect_ensemble(m, IcrConfig(tol_m=1e-14, tol_pi=1e-14))
    res = optimize_mixture(e, m)
    assert res.deviance < 1e-9


def test_single_member():
    m, e = incompatible_ensemble()
    one = Ensemble(e.members[:1], e.sources[:1])
    res = optimize_mixture(one, m)
    assert res.weights.tolist() == [1.0]
    assert grid_search(one, m)[1] == pytest.approx(res.deviance)


def test_identical_members_split_weight():
    m, e = incompatible_ensemble()
    twin = Ensemble([e.members[0], e.members[0]], [e.sources[0], e.sources[0]])
    res = optimize_mixture(twin, m)
    assert np.allclose(res.weights, [0.5, 0.5])


def test_permutation_invariance():
    m, e = incompatible_ensemble()
    a = optimize_mixture(e, m)
    b = optimize_mixture(Ensemble(e.members[::-1], e.sources[::-1]), m)
    assert a.deviance == pytest.approx(b.deviance, abs=1e-10)
    assert np.allclose(a.weights, b.weights[::-1], atol=1e-4)


def test_three_member_grid():
    rng = np.random.default_rng(11)
    v, m = random_model(rng)
    members = [random_joint(v, rng) for _ in range(3)]
    e = Ensemble(members, [("x",), ("y",), ("z",)])
    res = optimize_mixture(e, m)
    _, gf = grid_search(e, m)
    assert res.deviance <= gf + 1e-6
    assert abs(res.weights.sum() - 1) < 1e-12 and np.all(res.weights >= 0)


def test_ensemble_validation():
    rng = np.random.default_rng(0)
    v = make_variables([("a", 2), ("b", 2)])
    with pytest.raises(ScopeError):
        Ensemble([random_joint(v, rng), random_joint(v[:1], rng)], [("x",), ("y",)])
    with pytest.raises(ValidationError):
        Ensemble([random_joint(v, rng)], [])


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=6))
def test_project_simplex(x):
    w = project_simplex(np.array(x))
    assert abs(w.sum() - 1) < 1e-12 and np.all(w >= 0)
    # fixed point on the simplex
    assert np.allclose(project_simplex(w), w, atol=1e-12)


def test_result_dict():
    m, e = incompatible_ensemble()
    d = optimize_mixture(e, m).as_dict()
    assert set(d) == {"measure", "weights", "deviance", "member_deviances"}
