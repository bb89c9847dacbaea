"""Iterative conditional replacement along a permissible cycle.

Each step replaces the conditional of the current iterate: the iterate is
marginalized onto the next block's predictors and multiplied by that block's
table.  Predictor-only variables (Δ) stay in the conditioning set of every
iterate.

Two monitors are tracked per cycle ``t``:

``M(t)``
    convergence; symmetric divergences between marginals of the variables
    replaced between consecutive *anchor* iterates (iterates whose scope
    covers every variable of the cycle).
``Π(t)``
    compatibility; forward divergences ``I(older; newer)`` between
    consecutive anchor iterates.  With fewer than two anchors each step is
    compared on the overlap of the two scopes instead.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .cycles import UpdateCycle, enumerate_cycles, is_permissible, make_cycle
from .errors import NoCycle, NotConverged, ScopeError, SupportError, ValidationError
from .model import ConditionalBlock, CsmModel
from .tensor import (
    _LETTERS,
    Distribution,
    Variable,
    canonical,
    compose,
    condition,
    kl_values,
    sym_kl_values,
    marginalize,
    sym_kl,
    uniform,
)

log = logging.getLogger(__name__)

COMPATIBLE = "compatible"
INCOMPATIBLE = "incompatible"
UNDETERMINED = "undetermined"

InitSpec = Union[str, Distribution]


@dataclass
class IcrConfig:
    tol_m: float = 1e-10
    tol_pi: float = 1e-10
    max_cycles: int = 10000
    init: InitSpec = "uniform"
    seed: int | None = None
    plateau_cycles: int = 5
    plateau_rtol: float = 1e-6
    keep_history: bool = False

    def __post_init__(self):
        if not (self.tol_m > 0 and self.tol_pi > 0):
            raise ValidationError("tolerances must be positive")
        if self.max_cycles < 1:
            raise ValidationError("max_cycles must be >= 1")
        if isinstance(self.init, str) and self.init not in ("uniform", "block", "random"):
            raise ValidationError(f"unknown init {self.init!r}")


@dataclass
class IcrRun:
    cycle: UpdateCycle
    blocks: tuple[ConditionalBlock, ...]
    slots: list[Distribution]
    m_trace: list[float]
    pi_trace: list[float]
    converged: bool
    stop_cycle: int | None
    compatibility: str
    config: IcrConfig
    initial: Distribution
    history: list[list[Distribution]] = field(default_factory=list, repr=False)
    elapsed: float = 0.0

    @property
    def iterates(self) -> list[Distribution]:
        return self.slots

    def slot(self, block_id: str) -> Distribution:
        return self.slots[self.cycle.order.index(block_id)]


@dataclass
class StationarySet:
    cycle: UpdateCycle
    members: list[Distribution]
    labels: list[tuple[str, ...]]
    max_discrepancy: float


def project(q: Distribution, block: ConditionalBlock) -> Distribution:
    """Replace the conditional of ``q`` by ``block``'s table.

    ``q`` is marginalized onto the block's predictors (skipped when they
    already make up the whole scope) and multiplied by the block table.
    """
    preds = set(block.predictors)
    if not preds <= set(q.variables):
        raise ScopeError(
            f"cannot project onto {block.id!r}: predictors {sorted(v.name for v in preds)} "
            f"not all present in {q!r}"
        )
    if not set(q.given) <= preds:
        raise ScopeError(f"cannot project onto {block.id!r}: it drops conditioning variables")
    keep = [v for v in q.scope if v in preds]
    marg = q if len(keep) == len(q.scope) else marginalize(q, keep)
    return compose(block.table, marg)


# -- compiled run plan -------------------------------------------------------
#
# Inside a run every slot has a fixed layout (its scope in canonical order,
# then Δ), so the contractions and marginal sums can be worked out once and
# the loop runs on bare arrays.


def _letters(variables) -> dict:
    return {v: _LETTERS[i] for i, v in enumerate(canonical(variables))}


def _sum_axes(layout: tuple, keep) -> tuple[int, ...]:
    return tuple(i for i, v in enumerate(layout) if v not in keep)


_sym_arrays = sym_kl_values


def _flat(x: np.ndarray, axes) -> np.ndarray:
    return (np.add.reduce(x, axis=axes) if axes else x).ravel()


def _cat(parts: list) -> np.ndarray:
    return parts[0] if len(parts) == 1 else np.concatenate(parts)


class _Plan:
    def __init__(self, blocks: Sequence[ConditionalBlock], delta: frozenset):
        n = len(blocks)
        self.n = n
        dvars = canonical(delta)
        scopes = [frozenset(b.table.variables) for b in blocks]
        self.layouts = [canonical(s - delta) + dvars for s in scopes]
        self.tables = [b.table.table for b in blocks]
        letters = _letters(frozenset().union(*scopes))
        self.steps = []
        for k, blk in enumerate(blocks):
            src = self.layouts[k - 1]
            preds = set(blk.predictors)
            missing = preds - set(src)
            if missing:
                raise ScopeError(f"block {blk.id!r} needs {sorted(v.name for v in missing)} from its predecessor")
            axes = _sum_axes(src, preds)
            marg_layout = tuple(v for v in src if v in preds)
            out = self.layouts[k]
            expr = (
                "".join(letters[v] for v in blk.table.variables) + ","
                + "".join(letters[v] for v in marg_layout) + "->"
                + "".join(letters[v] for v in out)
            )
            undefined = blk.table.undefined_mask()
            if blk.predictors and np.any(undefined):
                perm = [marg_layout.index(v) for v in blk.predictors]
                check = (undefined, perm)
            else:
                check = None
            self.steps.append((axes, expr, check, blk.id))
        # monitors; 1-based positions, position p holds slot (p - 1) % n
        full = frozenset().union(*scopes)
        anchors = [p for p in range(1, n + 1) if scopes[p - 1] == full]
        self.anchors = tuple(anchors)
        self.m_pairs = []
        self.pi_pairs = []
        if anchors:
            seq = [(anchors[-1] - n, anchors[0])] + list(zip(anchors, anchors[1:]))
            for p, q in seq:
                replaced = set()
                for pos in range(p + 1, q + 1):
                    replaced |= set(blocks[(pos - 1) % n].target)
                keep = replaced | delta
                axes = _sum_axes(self.layouts[(p - 1) % n], keep)
                self.m_pairs.append((p, q, axes, _sum_axes(self.layouts[(q - 1) % n], keep)))
            if len(anchors) >= 2:
                self.pi_pairs = [(p, q) for p, q, _, _ in self.m_pairs]
        # gather specs (source, slot, axes); source 0 is the previous cycle
        def where(pos):
            return (1, pos - 1) if pos >= 1 else (0, (pos - 1) % n)

        if self.m_pairs:
            self.m_left = [where(p) + (ax_p,) for p, _, ax_p, _ in self.m_pairs]
            self.m_right = [where(q) + (ax_q,) for _, q, _, ax_q in self.m_pairs]
        else:
            self.m_left = [(0, k, ()) for k in range(n)]
            self.m_right = [(1, k, ()) for k in range(n)]
        if self.pi_pairs:
            self.pi_left = [where(p) + ((),) for p, _ in self.pi_pairs]
            self.pi_right = [where(q) + ((),) for _, q in self.pi_pairs]
        else:
            # overlap of each step with the iterate it replaced
            self.pi_left, self.pi_right = [], []
            for k in range(n):
                keep = (scopes[k - 1] & scopes[k]) | delta
                self.pi_left.append(where(k) + (_sum_axes(self.layouts[k - 1], keep),))
                self.pi_right.append((1, k, _sum_axes(self.layouts[k], keep)))
        self.m_needs = sorted({i for s, i, _ in self.m_left if s == 0})
        self.pi_needs = sorted({i for s, i, _ in self.pi_left if s == 0})

    def step(self, k: int, q: np.ndarray) -> np.ndarray:
        axes, expr, check, bid = self.steps[k]
        marg = np.add.reduce(q, axis=axes) if axes else q
        if check is not None:
            undefined, perm = check
            if np.any(np.transpose(marg, perm)[undefined] > 0):
                raise SupportError(f"iterate puts mass where block {bid!r} is undefined")
        return np.einsum(expr, self.tables[k], marg)

    def monitors(self, prev: list, cur: list) -> tuple[float, float]:
        # pairs are concatenated so each monitor is a single divergence call
        # before the first full cycle some earlier slots do not exist yet
        src = (prev, cur)
        m_val = pi_val = math.inf
        if all(prev[k] is not None for k in self.m_needs):
            ma = [_flat(src[s][i], ax) for s, i, ax in self.m_left]
            mb = [_flat(src[s][i], ax) for s, i, ax in self.m_right]
            m_val = _sym_arrays(_cat(ma), _cat(mb))
        if all(prev[k] is not None for k in self.pi_needs):
            pa = [_flat(src[s][i], ax) for s, i, ax in self.pi_left]
            pb = [_flat(src[s][i], ax) for s, i, ax in self.pi_right]
            pi_val = kl_values(_cat(pa), _cat(pb))
        return m_val, pi_val

    def wrap(self, k: int, arr: np.ndarray, delta_vars) -> Distribution:
        layout = self.layouts[k]
        nd = len(delta_vars)
        return Distribution(layout[: len(layout) - nd], layout[len(layout) - nd:], arr)


def _plateau(trace: Sequence[float], window: int, rtol: float, tol: float) -> bool:
    if len(trace) < window + 1:
        return False
    tail = trace[-(window + 1):]
    if any(not math.isfinite(x) or x <= tol for x in tail):
        return False
    return all(abs(b - a) <= rtol * abs(a) for a, b in zip(tail, tail[1:]))


# -- initialisation ----------------------------------------------------------


def _delta_of(blocks: Sequence[ConditionalBlock]) -> frozenset:
    targets = set().union(*(b.target for b in blocks))
    preds = set().union(*(b.predictors for b in blocks))
    return frozenset(preds - targets)


def initial_distribution(
    blocks: Sequence[ConditionalBlock], delta: frozenset, init: InitSpec, seed: int | None = None
) -> Distribution:
    """The iterate ``q(0)`` that precedes the first replacement.

    It lives on the scope of the *last* block of the cycle, conditioned on Δ.

    ``"uniform"``
        uniform over that scope.
    ``"block"``
        the last block's table times a uniform marginal over its predictors.
    ``"random"``
        as ``"block"`` with a seeded Dirichlet(1) marginal.
    a :class:`Distribution`
        its marginal over the last block's predictors, multiplied by the last
        block's table.  A joint that contains Δ is conditioned on Δ first.
    """
    last = blocks[-1]
    dvars = canonical(delta)
    free_preds = canonical(set(last.predictors) - delta)
    if isinstance(init, Distribution):
        d = init
        if delta and not d.given:
            if not delta <= set(d.scope):
                raise ScopeError("initial distribution must contain the predictor-only variables")
            d = condition(d, dvars)
        if set(d.given) != delta:
            raise ScopeError("initial distribution must be conditioned exactly on the predictor-only variables")
        if not set(free_preds) <= set(d.scope):
            raise ScopeError(
                f"initial distribution must cover {[v.name for v in free_preds]} (predictors of {last.id!r})"
            )
        return compose(last.table, marginalize(d, free_preds))
    if init == "uniform":
        return uniform(canonical(set(last.table.variables) - delta), dvars)
    marg = uniform(free_preds, dvars)
    if init == "random":
        rng = np.random.default_rng(seed)
        shape = marg.table.shape
        n_free = int(np.prod(shape[: len(free_preds)], dtype=int))
        n_given = int(np.prod(shape[len(free_preds):], dtype=int))
        draws = rng.dirichlet(np.ones(n_free), size=n_given).T
        marg = Distribution(free_preds, dvars, draws.reshape(shape, order="F"))
    return compose(last.table, marg)


# -- driver ------------------------------------------------------------------


def _as_cycle(m: CsmModel, cycle) -> UpdateCycle:
    if isinstance(cycle, UpdateCycle):
        return cycle
    return make_cycle(m, list(cycle))


def run_icr(m: CsmModel, cycle, cfg: IcrConfig | None = None) -> IcrRun:
    """Run ICR along ``cycle`` (an :class:`UpdateCycle` or a list of block ids).

    The run stops at the first cycle with ``M(t) < tol_m``; when ``Π`` is
    still above ``tol_pi`` at that point a few more cycles are run to
    establish a plateau.  A run that exhausts ``max_cycles`` is returned with
    ``converged=False``.
    """
    cfg = cfg or IcrConfig()
    cyc = _as_cycle(m, cycle)
    if not is_permissible(cyc):
        bad = [f"{e.from_block}->{e.to_block}" for e in cyc.edges if not e.permissible]
        raise NoCycle(f"order {list(cyc.order)} is not a permissible updating cycle (fails at {bad})")
    blocks = tuple(m.block(i) for i in cyc.order)
    delta = _delta_of(blocks)
    plan = _Plan(blocks, delta)
    q0 = initial_distribution(blocks, delta, cfg.init, cfg.seed)
    if q0.variables != plan.layouts[-1]:
        raise ScopeError("initial distribution does not live on the last block's scope")
    n = len(blocks)
    dvars = canonical(delta)
    prev: list = [None] * (n - 1) + [q0.table]
    history = [[None] * (n - 1) + [q0]] if cfg.keep_history else []
    m_trace: list[float] = []
    pi_trace: list[float] = []
    converged = False
    stop = None
    started = time.perf_counter()
    extra_cap = 4 * cfg.plateau_cycles
    for t in range(cfg.max_cycles):
        x = prev[-1]
        cur = []
        for k in range(n):
            x = plan.step(k, x)
            cur.append(x)
        m_val, pi_val = plan.monitors(prev, cur)
        m_trace.append(m_val)
        pi_trace.append(pi_val)
        prev = cur
        if cfg.keep_history:
            history.append([plan.wrap(k, a, dvars) for k, a in enumerate(cur)])
        if not converged and m_val < cfg.tol_m:
            converged, stop = True, t
        if converged:
            if pi_val < cfg.tol_pi:
                break
            if _plateau(pi_trace, cfg.plateau_cycles, cfg.plateau_rtol, cfg.tol_pi):
                break
            if t - stop >= extra_cap:
                break
    slots = history[-1] if cfg.keep_history else [plan.wrap(k, a, dvars) for k, a in enumerate(prev)]
    run = IcrRun(
        cycle=cyc,
        blocks=blocks,
        slots=slots,
        m_trace=m_trace,
        pi_trace=pi_trace,
        converged=converged,
        stop_cycle=stop,
        compatibility=UNDETERMINED,
        config=cfg,
        initial=q0,
        history=history,
        elapsed=time.perf_counter() - started,
    )
    run.compatibility = check_compatibility(run)
    if not converged:
        log.warning("ICR did not converge within %d cycles (last M=%.3g)", cfg.max_cycles, m_trace[-1])
    return run


def check_compatibility(run: IcrRun) -> str:
    if not run.converged:
        return UNDETERMINED
    cfg = run.config
    if run.pi_trace[-1] < cfg.tol_pi:
        return COMPATIBLE
    if _plateau(run.pi_trace, cfg.plateau_cycles, cfg.plateau_rtol, cfg.tol_pi):
        return INCOMPATIBLE
    return UNDETERMINED


def stationary_set(run: IcrRun) -> StationarySet:
    """Final slot iterates, checked for mutual stationarity.

    Mapping member ``i`` by the next block must reproduce member ``i+1``
    within ``10 * tol_pi`` symmetric divergence.
    """
    if not run.converged:
        raise NotConverged("run did not converge; no stationary set")
    n = len(run.slots)
    worst = 0.0
    for k in range(n):
        nxt = (k + 1) % n
        mapped = project(run.slots[k], run.blocks[nxt])
        worst = max(worst, sym_kl(mapped, run.slots[nxt]))
    if worst > 10 * run.config.tol_pi:
        raise NotConverged(f"slots are not mutually stationary (discrepancy {worst:.3g})")
    labels = [run.cycle.rotation(k) for k in range(n)]
    return StationarySet(run.cycle, list(run.slots), labels, worst)


def run_all(m: CsmModel, cycles: Sequence | None = None, cfg: IcrConfig | None = None,
            threads: int = 1, limit: int = 24) -> list[IcrRun]:
    """Run several cycles, optionally on a thread pool; runs share no state."""
    if cycles is None:
        cycles = enumerate_cycles(m, limit=limit)
    if not cycles:
        raise NoCycle("model has no permissible updating cycle")
    if threads <= 1 or len(cycles) == 1:
        return [run_icr(m, c, cfg) for c in cycles]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda c: run_icr(m, c, cfg), cycles))
