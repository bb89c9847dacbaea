import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from icr.cycles import (
    MAX_BLOCKS,
    canonical_rotation,
    check_edge,
    enumerate_cycles,
    has_cycle_through_all,
    is_permissible,
    make_cycle,
)
from icr.errors import InstanceTooLarge, UnknownBlock
from icr.model import CsmModel, fixture_path, load_model, make_block, make_variables


def scope_sets(m):
    return {b.id: ({v.name for v in b.target}, {v.name for v in b.predictors}) for b in m.blocks}


def uniform_block(bid, target, preds):
    size = int(np.prod([v.cardinality for v in target + preds]))
    nt = int(np.prod([v.cardinality for v in target]))
    return make_block(bid, target, preds, np.full(size, 1.0 / nt))


def test_example2_has_exactly_two_cycles():
    m = load_model(fixture_path("example2"))
    got = {c.order for c in enumerate_cycles(m)}
    assert got == {
        ("f1|2345", "f5|1234", "f4|15", "f3|145", "f2|1345"),
        ("f1|2345", "f4|15", "f3|145", "f2|1345", "f5|1234"),
    }
    assert got == oracles.cycles(scope_sets(m))


@pytest.mark.parametrize("name", ["example1_full", "example1_pair", "example3", "example4",
                                  "example6_a1", "blocked_cycle", "four_block_cycle"])
def test_fixtures_match_brute_force(name):
    m = load_model(fixture_path(name))
    got = {c.order for c in enumerate_cycles(m)}
    assert got == oracles.cycles(scope_sets(m))
    for c in enumerate_cycles(m):
        assert is_permissible(c)


def test_blocked_cycle_has_none():
    m = load_model(fixture_path("blocked_cycle"))
    assert enumerate_cycles(m) == []
    assert not has_cycle_through_all(m)
    assert has_cycle_through_all(load_model(fixture_path("four_block_cycle")))


@given(seed=st.integers(0, 10**6), nblocks=st.integers(2, 6))
def test_random_patterns_match_brute_force(seed, nblocks):
    rng = np.random.default_rng(seed)
    v = make_variables([(f"x{i}", 2) for i in range(5)])
    blocks = []
    for k in range(nblocks):
        n_t = rng.integers(1, 3)
        idx = rng.permutation(5)
        target = [v[i] for i in sorted(idx[:n_t])]
        rest = [v[i] for i in sorted(idx[n_t:]) if rng.random() < 0.7]
        blocks.append(uniform_block(f"b{k}", target, rest))
    m = CsmModel(v, tuple(blocks), warnings=("quiet",))
    got = {c.order for c in enumerate_cycles(m)}
    assert got == oracles.cycles(scope_sets(m))


def test_edge_rules():
    m = load_model(fixture_path("example2"))
    e = check_edge(m, "f4|15", "f3|145")
    assert e.rule_a and e.rule_b and e.permissible
    e = check_edge(m, "f3|145", "f4|15")
    assert not e.rule_b
    e = check_edge(m, "f4|15", "f1|2345")
    assert not e.rule_a
    assert e.as_dict()["permissible"] is False
    with pytest.raises(UnknownBlock):
        check_edge(m, "f4|15", "nope")


def test_make_cycle_and_rotation():
    m = load_model(fixture_path("example1_full"))
    c = make_cycle(m, ["f1|23", "f2|13", "f3"])
    assert not is_permissible(c)
    assert [e.permissible for e in c.edges] == [True, False, False]
    c = make_cycle(m, ["f1|23", "f2|13"])
    assert is_permissible(c)
    assert c.rotation(0) == ("f2|13", "f1|23")
    assert c.rotation(1) == ("f1|23", "f2|13")
    assert canonical_rotation(["c", "a", "b"]) == ("a", "b", "c")


def test_limit_and_size_cap():
    m = load_model(fixture_path("example2"))
    assert len(enumerate_cycles(m, limit=1)) == 1
    v = make_variables([("a", 2), ("b", 2)])
    blocks = tuple(uniform_block(f"b{k}", [v[0]], [v[1]]) for k in range(MAX_BLOCKS + 1))
    with pytest.raises(InstanceTooLarge):
        enumerate_cycles(CsmModel(v, blocks, warnings=("quiet",)))


def test_single_block_has_no_cycle():
    v = make_variables([("a", 2), ("b", 2)])
    m = CsmModel(v, (uniform_block("f", [v[0]], [v[1]]),))
    assert enumerate_cycles(m) == []


def test_all_rotations_are_one_cycle():
    m = load_model(fixture_path("example2"))
    for c in enumerate_cycles(m):
        for k in range(len(c)):
            rotated = c.order[k:] + c.order[:k]
            assert canonical_rotation(rotated) == c.order
            assert is_permissible(make_cycle(m, rotated))
    assert len(list(itertools.permutations(m.block_ids))) == 120
