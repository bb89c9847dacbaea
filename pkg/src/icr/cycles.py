"""Permissible updating cycles.

A replacement from block i's space onto block j's space is permissible when

* rule A: ``b_j ⊆ a_i ∪ b_i`` (block j's predictors can be marginalized out of
  the current iterate), and
* rule B: ``a_i ∩ b_j ≠ ∅`` (the variables just replaced feed the next block).

A cycle is a cyclic order of all blocks in which every step, including the
wrap-around, is permissible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .errors import InstanceTooLarge, UnknownBlock
from .model import CsmModel
from .tensor import Variable

MAX_BLOCKS = 8


@dataclass(frozen=True)
class EdgeCheck:
    from_block: str
    to_block: str
    rule_a: bool
    rule_b: bool

    @property
    def permissible(self) -> bool:
        return self.rule_a and self.rule_b

    def as_dict(self) -> dict:
        return {
            "from": self.from_block,
            "to": self.to_block,
            "rule_a": self.rule_a,
            "rule_b": self.rule_b,
            "permissible": self.permissible,
        }


@dataclass(frozen=True)
class UpdateCycle:
    order: tuple[str, ...]
    edges: tuple[EdgeCheck, ...]
    delta: tuple[Variable, ...]

    def __len__(self):
        return len(self.order)

    def rotation(self, k: int) -> tuple[str, ...]:
        """Order that starts right after slot ``k``; the label of the
        stationary distribution living in slot ``k``."""
        n = len(self.order)
        return tuple(self.order[(k + 1 + i) % n] for i in range(n))

    def as_dict(self) -> dict:
        return {
            "order": list(self.order),
            "delta": [v.name for v in self.delta],
            "edges": [e.as_dict() for e in self.edges],
        }


def _rules(m: CsmModel, i: str, j: str) -> EdgeCheck:
    bi, bj = m.block(i), m.block(j)
    rule_a = set(bj.predictors) <= set(bi.target) | set(bi.predictors)
    rule_b = bool(set(bi.target) & set(bj.predictors))
    return EdgeCheck(i, j, rule_a, rule_b)


def check_edge(m: CsmModel, i: str, j: str) -> EdgeCheck:
    for bid in (i, j):
        if bid not in m.block_ids:
            raise UnknownBlock(f"unknown block {bid!r}")
    return _rules(m, i, j)


def canonical_rotation(order: Sequence[str]) -> tuple[str, ...]:
    k = order.index(min(order))
    return tuple(order[k:]) + tuple(order[:k])


def make_cycle(m: CsmModel, order: Sequence[str]) -> UpdateCycle:
    """Build an :class:`UpdateCycle` for an explicit order (not rotated).

    Edges are evaluated but permissibility is not enforced; check
    ``all(e.permissible for e in cycle.edges)``.
    """
    order = tuple(order)
    n = len(order)
    edges = tuple(check_edge(m, order[k], order[(k + 1) % n]) for k in range(n))
    return UpdateCycle(order, edges, m.delta)


def is_permissible(cycle: UpdateCycle) -> bool:
    return len(cycle.order) > 1 and all(e.permissible for e in cycle.edges)


def enumerate_cycles(m: CsmModel, limit: int | None = None) -> list[UpdateCycle]:
    """All permissible cycles up to rotation, smallest block id first.

    Depth-first search over Hamiltonian cycles of the permissibility graph,
    rooted at the smallest id.  Output is sorted by order.
    """
    ids = sorted(m.block_ids)
    n = len(ids)
    if n > MAX_BLOCKS:
        raise InstanceTooLarge(f"{n} blocks; exhaustive enumeration supports at most {MAX_BLOCKS}")
    if n < 2:
        return []
    ok = {(i, j): _rules(m, i, j).permissible for i in ids for j in ids if i != j}
    root = ids[0]
    found: list[tuple[str, ...]] = []

    def extend(path: list[str], remaining: set):
        if limit is not None and len(found) >= limit:
            return
        if not remaining:
            if ok[(path[-1], root)]:
                found.append(tuple(path))
            return
        for nxt in sorted(remaining):
            if ok[(path[-1], nxt)]:
                path.append(nxt)
                remaining.remove(nxt)
                extend(path, remaining)
                remaining.add(nxt)
                path.pop()

    extend([root], set(ids[1:]))
    return [make_cycle(m, order) for order in found]


def has_cycle_through_all(m: CsmModel) -> bool:
    return bool(enumerate_cycles(m, limit=1))
