"""Regenerate the JSON fixtures shipped in src/icr/fixtures.

Run from the repository root:  python3 tools/make_fixtures.py
Random joints are drawn from fixed seeds, so the output is reproducible.
"""

import json
from pathlib import Path

import numpy as np

from icr.model import (
    ConditionalBlock,
    CsmModel,
    derive_csm_from_joint,
    distribution_to_dict,
    make_variables,
    model_to_dict,
)
from icr.tensor import Distribution, compose, condition

OUT = Path(__file__).resolve().parents[1] / "src" / "icr" / "fixtures"


def write(name, obj):
    (OUT / name).write_text(json.dumps(obj, indent=1) + "\n")


def joint(variables, values):
    return Distribution.from_values(variables, (), np.asarray(values, float))


def random_joint(variables, seed):
    rng = np.random.default_rng(seed)
    size = int(np.prod([v.cardinality for v in variables]))
    return joint(variables, rng.dirichlet(np.ones(size)))


def full_table_block(bid, variables, target, arr):
    """Block from a dense array with one axis per model variable."""
    tv = [v for v in variables if v.name == target]
    pv = [v for v in variables if v.name != target]
    d = Distribution(variables, (), arr)
    return ConditionalBlock(bid, Distribution(tv, pv, np.transpose(d.table, [variables.index(v) for v in tv + pv])))


def example1():
    v = make_variables([("x1", 2), ("x2", 2), ("x3", 2)])
    pi = joint(v, np.array([1, 3, 4, 2, 3, 3, 3, 1]) / 20)
    m = derive_csm_from_joint(pi, [(["x3"], []), (["x1"], ["x2", "x3"]), (["x2"], ["x1", "x3"])])
    f3, f1, f2 = m.blocks
    g = np.array([3 / 5, 1 / 7, 2 / 5, 6 / 7, 4 / 5, 3 / 4, 1 / 5, 1 / 4]).reshape((2, 2, 2), order="F")
    g2 = ConditionalBlock("g2|13", Distribution([v[1]], [v[0], v[2]], np.transpose(g, (1, 0, 2))))
    write("example1_joint.json", distribution_to_dict(pi))
    write("example1_full.json", model_to_dict(CsmModel(v, (f1, f2, f3))))
    write("example1_pair.json", model_to_dict(CsmModel(v, (f1, f2))))
    write("example1_incompatible.json", model_to_dict(CsmModel(v, (f1, g2))))
    write("example1_incompatible_full.json", model_to_dict(CsmModel(v, (f1, g2, f3))))
    write("example1_plan.json", {"phases": [
        {"id": "pair", "mode": "icr", "inputs": ["f1|23", "f2|13"], "cycle": ["f1|23", "f2|13"]},
        {"id": "joint", "mode": "compose", "inputs": ["pair", "f3"]},
    ]})
    write("example1_incompatible_plan.json", {"phases": [
        {"id": "pair", "mode": "icr", "inputs": ["f1|23", "g2|13"], "cycle": ["f1|23", "g2|13"]},
        {"id": "joint", "mode": "compose", "inputs": ["pair", "f3"]},
    ]})


def example2():
    v = make_variables([(f"x{i}", 2) for i in range(1, 6)])
    pi = random_joint(v, 2)
    pattern = [
        (["x1"], ["x2", "x3", "x4", "x5"]),
        (["x2"], ["x1", "x3", "x4", "x5"]),
        (["x3"], ["x1", "x4", "x5"]),
        (["x4"], ["x1", "x5"]),
        (["x5"], ["x1", "x2", "x3", "x4"]),
    ]
    write("example2.json", model_to_dict(derive_csm_from_joint(pi, pattern)))
    write("example2_joint.json", distribution_to_dict(pi))


def example3():
    v = make_variables([(f"x{i}", 2) for i in range(1, 6)])
    pi = random_joint(v, 3)
    pattern = [
        (["x1"], ["x2", "x3", "x4", "x5"]),
        (["x2"], ["x3", "x4", "x5"]),
        (["x3"], ["x1", "x4", "x5"]),
        (["x4"], ["x2", "x5"]),
        (["x5"], ["x1", "x3"]),
    ]
    write("example3.json", model_to_dict(derive_csm_from_joint(pi, pattern)))
    write("example3_joint.json", distribution_to_dict(pi))
    write("example3_plan.json", {"phases": [
        {"id": "p1", "mode": "icr", "inputs": ["f1|2345", "f2|345", "f3|145"],
         "cycle": ["f3|145", "f2|345", "f1|2345"], "select": "f1|2345"},
        {"id": "p2", "mode": "icr", "inputs": ["p1", "f4|25"], "cycle": ["f4|25", "p1"], "select": "p1"},
        {"id": "p3", "mode": "icr", "inputs": ["p2", "f5|13"], "cycle": ["f5|13", "p2"], "select": "p2"},
    ]})


def example4():
    v = make_variables([(f"x{i}", 2) for i in range(1, 7)])
    rng = np.random.default_rng(4)
    x1, x2, x3 = v[:3]
    # log-linear joint of (x1, x2, x3) with two-way terms only
    log_t = (rng.normal(size=(2, 2, 1)) + rng.normal(size=(1, 2, 2)) + rng.normal(size=(2, 1, 2)))
    t = np.exp(log_t)
    p123 = Distribution([x1, x2, x3], (), t / t.sum())
    rest = rng.dirichlet(np.ones(8), size=8).T.reshape((2, 2, 2, 2, 2, 2), order="F")
    cond = Distribution(v[3:], v[:3], rest)
    pi = compose(cond, p123)
    pattern = [
        (["x2"], ["x1"]),
        (["x3"], ["x2"]),
        (["x1"], ["x3"]),
        (["x4"], ["x1", "x2", "x3"]),
        (["x5"], ["x1", "x2", "x4", "x6"]),
        (["x6"], ["x1", "x2", "x4", "x5"]),
        (["x3"], ["x1", "x2", "x4", "x5", "x6"]),
        (["x6"], ["x1", "x2", "x3", "x4", "x5"]),
    ]
    ids = ["f2|1", "f3|2", "f1|3", "f4|123", "f5|1246", "f6|1245", "f3*|12456", "f6*|12345"]
    write("example4.json", model_to_dict(derive_csm_from_joint(pi, pattern, ids=ids)))
    write("example4_joint.json", distribution_to_dict(pi))
    write("example4_plan.json", {"phases": [
        {"id": "pairs", "mode": "icr", "inputs": ["f2|1", "f3|2", "f1|3"], "cycle": ["f2|1", "f3|2", "f1|3"]},
        {"id": "f56", "mode": "icr", "inputs": ["f5|1246", "f6|1245"], "select": "f6|1245"},
        {"id": "f36", "mode": "icr", "inputs": ["f3*|12456", "f6*|12345"], "select": "f6*|12345"},
        {"id": "p123", "mode": "ipf", "inputs": ["pairs/f2|1", "pairs/f3|2", "pairs/f1|3"],
         "params": {"assumption": "zero-three-way"}},
        {"id": "p1234", "mode": "compose", "inputs": ["f4|123", "p123"]},
        {"id": "p12456", "mode": "compose", "inputs": ["f56", "p1234"]},
        {"id": "p123456", "mode": "compose", "inputs": ["f36", "p12456"]},
    ]})


def example5():
    v = make_variables([("x1", 2), ("x2", 3)])
    pi = joint(v, np.array([200000, 2, 500000, 5, 7, 1]) / 700015)
    write("example5_sticky.json", model_to_dict(derive_csm_from_joint(pi, [(["x1"], ["x2"]), (["x2"], ["x1"])])))
    write("example5_joint.json", distribution_to_dict(pi))


def example6():
    v = make_variables([(f"x{i}", 2) for i in range(1, 5)])
    cols = [(0, 0, 0, 0), (0, 1, 0, 0), (1, 0, 1, 0), (1, 1, 1, 0),
            (0, 0, 0, 1), (0, 1, 0, 1), (1, 0, 1, 1), (1, 1, 1, 1)]

    def table(vals):
        a = np.zeros((2, 2, 2, 2))
        for c, x in zip(cols, vals):
            a[c] = x
        return a

    ones = table([1] * 8)
    f2 = table([1 / 8, 7 / 8, 2 / 5, 3 / 5, 5 / 12, 7 / 12, 1 / 5, 4 / 5])
    f4 = table([1 / 6, 1 / 2, 2 / 3, 3 / 7, 5 / 6, 1 / 2, 1 / 3, 4 / 7])
    g4 = table([1 / 6, 3 / 10, 2 / 3, 3 / 7, 5 / 6, 7 / 10, 1 / 3, 4 / 7])
    common = [
        full_table_block("f1|234", v, "x1", ones),
        full_table_block("f2|134", v, "x2", f2),
        full_table_block("f3|124", v, "x3", ones),
    ]
    write("example6_a1.json", model_to_dict(CsmModel(v, tuple(common + [full_table_block("f4|123", v, "x4", f4)]))))
    write("example6_a2.json", model_to_dict(CsmModel(v, tuple(common + [full_table_block("g4|123", v, "x4", g4)]))))
    support = [(0, 0, 0, 0), (0, 1, 0, 0), (0, 0, 0, 1), (0, 1, 0, 1),
               (1, 0, 1, 0), (1, 1, 1, 0), (1, 0, 1, 1), (1, 1, 1, 1)]
    inits = {
        "u": [1 / 8] * 8,
        "v": [1 / 20, 3 / 20, 2 / 20, 4 / 20, 1 / 10, 1 / 10, 1 / 10, 2 / 10],
        "w": [1 / 15, 2 / 15, 3 / 15, 4 / 15, 1 / 15, 1 / 15, 1 / 15, 2 / 15],
    }
    for name, vals in inits.items():
        a = np.zeros((2, 2, 2, 2))
        for c, x in zip(support, vals):
            a[c] = x
        write(f"example6_init_{name}.json", distribution_to_dict(Distribution(v, (), a)))


def unsaturated_no_cycle():
    v = make_variables([(f"x{i}", 2) for i in range(1, 6)])
    pi = random_joint(v, 22)
    base = [
        (["x1", "x2"], ["x3"]),
        (["x4"], ["x1", "x2", "x3"]),
        (["x3"], ["x1", "x2", "x4"]),
        (["x5"], ["x1", "x2", "x3", "x4"]),
    ]
    write("blocked_cycle.json", model_to_dict(derive_csm_from_joint(pi, base)))
    fixed = [(["x1", "x2"], ["x3", "x5"])] + base[1:]
    write("four_block_cycle.json", model_to_dict(derive_csm_from_joint(pi, fixed)))
    write("four_block_joint.json", distribution_to_dict(pi))


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    example1()
    example2()
    example3()
    example4()
    example5()
    example6()
    unsaturated_no_cycle()
    print(f"wrote fixtures to {OUT}")


if __name__ == "__main__":
    main()
