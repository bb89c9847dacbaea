"""Divide-then-combine orchestration.

A plan is an ordered list of phases.  Each phase consumes original blocks or
outputs of earlier phases and produces named intermediates:

* ``icr``: run ICR on the inputs (treated as conditional blocks).  Every slot
  is published as ``"<phase>/<block id>"``; the slot named by ``select``
  (default: the last block of the cycle) is also published as ``"<phase>"``.
* ``compose``: ``inputs = [conditional, source]``.  The source is reduced to
  the conditional's predictors and multiplied in, i.e. a single replacement.
* ``ipf``: fit a joint to the given marginals by iterative proportional
  fitting.  ``params.assumption`` is ``"zero-three-way"`` (start from uniform,
  so no higher-order interaction is introduced) or ``"offset"`` with a
  log-linear ``params.offset`` table over the union of the marginals.

Plan JSON::

    {"phases": [
        {"id": "p1", "mode": "icr", "inputs": ["f1|23", "f2|13"],
         "cycle": ["f1|23", "f2|13"], "select": "f2|13"},
        {"id": "p2", "mode": "compose", "inputs": ["p1", "f3"]}
    ]}
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .cycles import enumerate_cycles, make_cycle
from .engine import IcrConfig, project, run_icr
from .errors import (
    IcrError,
    Inconsistent,
    NonConvergence,
    ParseError,
    PhaseError,
    ScopeError,
    ValidationError,
)
from .model import ConditionalBlock, CsmModel, distribution_from_dict
from .tensor import Distribution, canonical, marginalize, uniform

log = logging.getLogger(__name__)

MODES = ("icr", "compose", "ipf")
ASSUMPTIONS = ("zero-three-way", "offset")


@dataclass(frozen=True)
class Phase:
    id: str
    mode: str
    inputs: tuple[str, ...]
    cycle: tuple[str, ...] | None = None
    select: str | None = None
    params: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class SynthesisPlan:
    phases: tuple[Phase, ...]


@dataclass(frozen=True)
class Intermediate:
    id: str
    dist: Distribution
    phase: str
    tag: tuple[str, ...]
    assumption_dependent: bool = False

    def is_joint_over(self, variables) -> bool:
        return self.dist.is_joint and set(self.dist.scope) == set(variables)


# -- parsing -----------------------------------------------------------------


def plan_from_dict(obj) -> SynthesisPlan:
    if not isinstance(obj, dict) or not isinstance(obj.get("phases"), list):
        raise ValidationError("plan must be an object with a 'phases' list")
    phases = []
    for k, raw in enumerate(obj["phases"]):
        if not isinstance(raw, dict):
            raise ValidationError(f"phase #{k} is not an object")
        pid = str(raw.get("id", f"phase{k + 1}"))
        mode = raw.get("mode")
        if mode not in MODES:
            raise ValidationError(f"phase {pid!r}: mode must be one of {MODES}")
        inputs = raw.get("inputs")
        if not isinstance(inputs, list) or not inputs:
            raise ValidationError(f"phase {pid!r}: inputs must be a non-empty list")
        cycle = raw.get("cycle")
        phases.append(
            Phase(
                id=pid,
                mode=mode,
                inputs=tuple(str(i) for i in inputs),
                cycle=tuple(cycle) if cycle else None,
                select=raw.get("select"),
                params=dict(raw.get("params") or {}),
            )
        )
    return SynthesisPlan(tuple(phases))


def plan_to_dict(plan: SynthesisPlan) -> dict:
    out = []
    for p in plan.phases:
        d = {"id": p.id, "mode": p.mode, "inputs": list(p.inputs)}
        if p.cycle:
            d["cycle"] = list(p.cycle)
        if p.select:
            d["select"] = p.select
        if p.params:
            d["params"] = p.params
        out.append(d)
    return {"phases": out}


def load_plan(path) -> SynthesisPlan:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read plan {path}: {exc}") from exc
    try:
        return plan_from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def _phase_outputs(p: Phase) -> list[str]:
    names = [p.id]
    if p.mode == "icr":
        names += [f"{p.id}/{i}" for i in p.inputs]
    return names


def check_plan(m: CsmModel, plan: SynthesisPlan) -> None:
    """Structural checks: ids are unique and every input exists upstream."""
    if not plan.phases:
        raise ValidationError("plan has no phases")
    known = set(m.block_ids)
    seen_phase = set()
    for p in plan.phases:
        if p.id in seen_phase or p.id in m.block_ids:
            raise ValidationError(f"phase id {p.id!r} is not unique")
        seen_phase.add(p.id)
        missing = [i for i in p.inputs if i not in known]
        if missing:
            raise ValidationError(f"phase {p.id!r}: unknown inputs {missing}")
        if len(set(p.inputs)) != len(p.inputs):
            raise ValidationError(f"phase {p.id!r}: repeated input")
        if p.mode == "icr":
            if len(p.inputs) < 2:
                raise ValidationError(f"phase {p.id!r}: icr needs at least two inputs")
            if p.cycle and sorted(p.cycle) != sorted(p.inputs):
                raise ValidationError(f"phase {p.id!r}: cycle must be an ordering of the inputs")
            if p.select and p.select not in p.inputs:
                raise ValidationError(f"phase {p.id!r}: select must name one of the inputs")
        elif p.mode == "compose" and len(p.inputs) != 2:
            raise ValidationError(f"phase {p.id!r}: compose takes [conditional, source]")
        elif p.mode == "ipf":
            assumption = p.params.get("assumption", "zero-three-way")
            if assumption not in ASSUMPTIONS:
                raise ValidationError(f"phase {p.id!r}: unknown ipf assumption {assumption!r}")
            if assumption == "offset" and "offset" not in p.params:
                raise ValidationError(f"phase {p.id!r}: offset assumption needs params.offset")
        known.update(_phase_outputs(p))


# -- IPF ---------------------------------------------------------------------


def _broadcast(d: Distribution, variables) -> np.ndarray:
    """View ``d.table`` with singleton axes so it broadcasts against a table
    over ``variables`` (``d``'s variables must be a canonical subsequence)."""
    shape = [1] * len(variables)
    for v in d.variables:
        shape[variables.index(v)] = v.cardinality
    return d.table.reshape(shape)


def ipf_fit(
    targets: Sequence[Distribution],
    init: Distribution | None = None,
    tol: float = 1e-10,
    max_iter: int = 10000,
) -> Distribution:
    """Cyclic proportional scaling of ``init`` until every marginal matches.

    Stops once each fitted marginal is within ``tol`` (L1) of its target.
    """
    if not targets:
        raise ValidationError("ipf_fit needs at least one target marginal")
    for t in targets:
        if t.given:
            raise ScopeError("ipf targets must be marginal (unconditioned) distributions")
    union = canonical(set().union(*(t.scope for t in targets)))
    for i, s in enumerate(targets):
        for t in targets[i + 1:]:
            shared = set(s.scope) & set(t.scope)
            if shared:
                gap = np.abs(marginalize(s, shared).table - marginalize(t, shared).table).sum()
            else:
                gap = 0.0
            if gap > 1e-8:
                raise Inconsistent(
                    f"marginals disagree on {sorted(v.name for v in shared)} (L1 gap {gap:.3g})"
                )
    if init is None:
        init = uniform(union)
    if init.given or set(init.scope) != set(union):
        raise ScopeError("ipf init must be a joint over the union of the target scopes")
    q = np.array(init.table, dtype=float)
    q /= q.sum()
    for it in range(max_iter):
        worst = 0.0
        for t in targets:
            cur = marginalize(Distribution(union, (), q), t.scope)
            ratio = np.divide(t.table, cur.table, out=np.zeros_like(t.table), where=cur.table > 0)
            q = q * _broadcast(Distribution(t.scope, (), ratio), union)
        for t in targets:
            cur = marginalize(Distribution(union, (), q), t.scope)
            worst = max(worst, float(np.abs(cur.table - t.table).sum()))
        if worst < tol:
            log.debug("ipf converged after %d sweeps", it + 1)
            return Distribution(union, (), q / q.sum())
    raise NonConvergence(f"ipf did not reach L1 {tol:g} in {max_iter} sweeps (last {worst:.3g})")


# -- execution ---------------------------------------------------------------


def _as_block(name: str, store: dict) -> ConditionalBlock:
    item = store[name]
    if isinstance(item, ConditionalBlock):
        return item
    return ConditionalBlock(name, item.dist)


def _dist(name: str, store: dict) -> Distribution:
    item = store[name]
    return item.table if isinstance(item, ConditionalBlock) else item.dist


def _depends(p: Phase, tainted: set) -> bool:
    return any(i in tainted for i in p.inputs)


def run_plan(m: CsmModel, plan: SynthesisPlan, cfg: IcrConfig | None = None) -> list[Intermediate]:
    """Execute ``plan`` phase by phase and return every intermediate."""
    cfg = cfg or IcrConfig()
    check_plan(m, plan)
    store: dict = {b.id: b for b in m.blocks}
    tainted: set = set()
    out: list[Intermediate] = []
    for p in plan.phases:
        try:
            produced = _run_phase(m, p, store, cfg)
        except IcrError as exc:
            raise PhaseError(p.id, exc) from exc
        flag = p.mode == "ipf" or _depends(p, tainted)
        for name, dist, tag in produced:
            inter = Intermediate(name, dist, p.id, tag, flag)
            store[name] = inter
            out.append(inter)
            if flag:
                tainted.add(name)
    return out


def _run_phase(m: CsmModel, p: Phase, store: dict, cfg: IcrConfig):
    if p.mode == "icr":
        blocks = tuple(_as_block(i, store) for i in p.inputs)
        group = CsmModel(m.variables, blocks)
        if p.cycle:
            cyc = make_cycle(group, p.cycle)
        else:
            found = enumerate_cycles(group, limit=1)
            if not found:
                raise ValidationError(f"inputs {list(p.inputs)} admit no permissible cycle")
            cyc = found[0]
        init = p.params.get("init", cfg.init)
        if isinstance(init, dict):
            init = distribution_from_dict(init, m.variables)
        run_cfg = IcrConfig(
            tol_m=float(p.params.get("tol_m", cfg.tol_m)),
            tol_pi=float(p.params.get("tol_pi", cfg.tol_pi)),
            max_cycles=int(p.params.get("max_cycles", cfg.max_cycles)),
            init=init,
            seed=cfg.seed,
        )
        run = run_icr(group, cyc, run_cfg)
        if not run.converged:
            raise NonConvergence(f"ICR did not converge in {run_cfg.max_cycles} cycles")
        log.info("phase %s: %s after %d cycles", p.id, run.compatibility, len(run.m_trace))
        produced = []
        for k, bid in enumerate(cyc.order):
            produced.append((f"{p.id}/{bid}", run.slots[k], cyc.rotation(k)))
        sel = p.select or cyc.order[-1]
        k = cyc.order.index(sel)
        produced.insert(0, (p.id, run.slots[k], cyc.rotation(k)))
        return produced
    if p.mode == "compose":
        cond_name, src_name = p.inputs
        block = _as_block(cond_name, store)
        src = _dist(src_name, store)
        return [(p.id, project(src, block), (cond_name, src_name))]
    # ipf
    targets = [_dist(i, store) for i in p.inputs]
    init = None
    if p.params.get("assumption", "zero-three-way") == "offset":
        off = p.params["offset"]
        union = canonical(set().union(*(t.scope for t in targets)))
        raw = np.asarray(off["values"] if isinstance(off, dict) else off, dtype=float)
        table = np.exp(raw - raw.max()).reshape([v.cardinality for v in union], order="F")
        init = Distribution(union, (), table / table.sum())
    fitted = ipf_fit(
        targets,
        init,
        tol=float(p.params.get("tol", 1e-10)),
        max_iter=int(p.params.get("max_iter", 10000)),
    )
    return [(p.id, fitted, tuple(p.inputs))]


# -- sufficiency -------------------------------------------------------------


@dataclass
class SufficiencyReport:
    sufficient: bool
    assumption_dependent: list[str]
    assumptions: dict
    unused_blocks: list[str]
    undetermined_variables: list[str]
    final: str | None

    def as_dict(self) -> dict:
        return {
            "sufficient": self.sufficient,
            "assumption_dependent": self.assumption_dependent,
            "assumptions": self.assumptions,
            "unused_blocks": self.unused_blocks,
            "undetermined_variables": self.undetermined_variables,
            "final": self.final,
        }


def validate_sufficiency(m: CsmModel, plan: SynthesisPlan) -> SufficiencyReport:
    """Which plan outputs rest on assumptions the model does not supply.

    Works on scopes only, nothing is computed.  IPF outputs and everything
    derived from them are flagged; so are model blocks the plan never uses
    and variables the last phase does not cover.
    """
    check_plan(m, plan)
    scopes: dict[str, tuple[frozenset, frozenset]] = {
        b.id: (frozenset(b.target), frozenset(b.predictors)) for b in m.blocks
    }
    used: set = set()
    tainted: set = set()
    assumptions: dict = {}
    flagged: list[str] = []
    last_main = None
    for p in plan.phases:
        used.update(i for i in p.inputs if i in m.block_ids)
        ins = [scopes[i] for i in p.inputs]
        names = []
        if p.mode == "icr":
            targets = frozenset().union(*(a for a, _ in ins))
            preds = frozenset().union(*(b for _, b in ins))
            delta = preds - targets
            order = list(p.cycle or p.inputs)
            k = order.index(p.select or order[-1])
            slots = []
            for name in order:
                a, b = scopes[name]
                slots.append((f"{p.id}/{name}", ((a | b) - delta, delta)))
            for name, sc in slots:
                scopes[name] = sc
                names.append(name)
            scopes[p.id] = slots[k][1]
        elif p.mode == "compose":
            (a, b), (sa, sb) = ins
            scopes[p.id] = (a | (b - sb), sb)
        else:
            scopes[p.id] = (frozenset().union(*(a for a, _ in ins)), frozenset())
            assumptions[p.id] = p.params.get("assumption", "zero-three-way")
        names.insert(0, p.id)
        if p.mode == "ipf" or _depends(p, tainted):
            tainted.update(names)
            flagged.extend(names)
        last_main = p.id
    final_scope = scopes[last_main][0] | scopes[last_main][1]
    undetermined = [v.name for v in m.variables if v not in final_scope]
    unused = [b for b in m.block_ids if b not in used]
    return SufficiencyReport(
        sufficient=not flagged and not unused and not undetermined,
        assumption_dependent=flagged,
        assumptions=assumptions,
        unused_blocks=unused,
        undetermined_variables=undetermined,
        final=last_main,
    )
