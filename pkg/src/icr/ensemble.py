"""Mixtures of stationary joints and their deviance from a model.

The deviance of a joint ``p`` from a model is

    sum over blocks i, over predictor configurations b with p(b) > 0, of
    p(b) * D( f_i(. | b) || p(. | b) )

where ``D`` is Kullback-Leibler, Pearson X^2 ``sum (f - m)^2 / m`` or
Freeman-Tukey ``4 sum (sqrt f - sqrt m)^2``.  It is zero exactly when every
block is a conditional of ``p``.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .cycles import enumerate_cycles
from .engine import IcrConfig, run_all
from .errors import NoCycle, ScopeError, SupportError, ValidationError
from .model import CsmModel
from .tensor import Distribution

log = logging.getLogger(__name__)

KL = "kl"
PEARSON = "pearson-x2"
FREEMAN_TUKEY = "freeman-tukey-f2"
MEASURES = (KL, PEARSON, FREEMAN_TUKEY)
_ALIASES = {"kl": KL, "x2": PEARSON, "pearson": PEARSON, PEARSON: PEARSON,
            "f2": FREEMAN_TUKEY, "ft": FREEMAN_TUKEY, FREEMAN_TUKEY: FREEMAN_TUKEY}


def measure_name(measure: str) -> str:
    try:
        return _ALIASES[measure]
    except KeyError:
        raise ValidationError(f"unknown deviance measure {measure!r}; use one of {MEASURES}") from None


@dataclass
class Ensemble:
    members: list[Distribution]
    sources: list[tuple[str, ...]]

    def __post_init__(self):
        if self.members:
            first = self.members[0]
            for d in self.members[1:]:
                if d.scope != first.scope or d.given != first.given:
                    raise ScopeError("ensemble members must share one scope")
        if len(self.sources) != len(self.members):
            raise ValidationError("one source label per member is required")


@dataclass
class MixtureResult:
    weights: np.ndarray
    mixture: Distribution
    deviance: float
    measure: str
    member_deviances: np.ndarray

    def as_dict(self) -> dict:
        return {
            "measure": self.measure,
            "weights": self.weights.tolist(),
            "deviance": self.deviance,
            "member_deviances": self.member_deviances.tolist(),
        }


# -- deviance ----------------------------------------------------------------


class _Evaluator:
    """Deviance of a batch of full joints, laid out as ``(batch, *cards)``."""

    def __init__(self, m: CsmModel, measure: str):
        self.measure = measure_name(measure)
        self.variables = m.variables
        self.parts = []
        nv = len(m.variables)
        for blk in m.blocks:
            keep = blk.target + blk.predictors
            pos = [m.variables.index(v) for v in keep]
            drop = tuple(1 + i for i in range(nv) if i not in pos)
            # after summing ``drop`` the kept axes are in declaration order
            order = sorted(pos)
            perm = [0] + [1 + order.index(p) for p in pos]
            na = len(blk.target)
            f = blk.table.table
            defined = ~blk.table.undefined_mask()
            self.parts.append((drop, perm, na, f, defined, blk.id))

    def __call__(self, joints: np.ndarray) -> np.ndarray:
        total = np.zeros(joints.shape[0])
        for drop, perm, na, f, defined, bid in self.parts:
            ab = joints.sum(axis=drop) if drop else joints
            ab = np.transpose(ab, perm)
            a_axes = tuple(range(1, 1 + na))
            pb = ab.sum(axis=a_axes, keepdims=True)
            live = pb > 0
            if np.any(live & ~defined.reshape((1,) + (1,) * na + defined.shape)):
                raise SupportError(f"mixture puts mass where block {bid!r} is undefined")
            cond = np.divide(ab, pb, out=np.zeros_like(ab), where=live)
            fb = np.broadcast_to(f[None, ...], cond.shape)
            if self.measure == KL:
                pos = fb > 0
                with np.errstate(divide="ignore", invalid="ignore"):
                    cell = np.where(pos, fb * np.log(np.where(pos, fb, 1.0) / cond), 0.0)
            elif self.measure == PEARSON:
                with np.errstate(divide="ignore", invalid="ignore"):
                    cell = np.where(cond > 0, (fb - cond) ** 2 / np.where(cond > 0, cond, 1.0),
                                    np.where(fb > 0, np.inf, 0.0))
            else:
                cell = 4.0 * (np.sqrt(fb) - np.sqrt(cond)) ** 2
            per_b = cell.sum(axis=a_axes, keepdims=True)
            weighted = np.where(live, pb * per_b, 0.0)
            total += weighted.reshape(joints.shape[0], -1).sum(axis=1)
        return total


def _joint_array(mix: Distribution, m: CsmModel) -> np.ndarray:
    if mix.given or set(mix.scope) != set(m.variables):
        raise ScopeError("deviance needs a joint over all model variables")
    return mix.table


def model_deviance(mix: Distribution, m: CsmModel, measure: str = KL) -> float:
    return float(_Evaluator(m, measure)(_joint_array(mix, m)[None, ...])[0])


# -- ensembles ---------------------------------------------------------------


def collect_ensemble(m: CsmModel, cfg: IcrConfig | None = None, threads: int = 1, limit: int = 24) -> Ensemble:
    """Stationary joints over the full scope from every permissible cycle."""
    cycles = enumerate_cycles(m, limit=limit)
    if not cycles:
        raise NoCycle("model has no permissible updating cycle")
    members, sources = [], []
    for run in run_all(m, cycles, cfg, threads=threads):
        for k, slot in enumerate(run.slots):
            if slot.is_joint and set(slot.scope) == set(m.variables):
                members.append(slot)
                sources.append(run.cycle.rotation(k))
    if not members:
        raise ScopeError("no stationary distribution covers every variable")
    return Ensemble(members, sources)


def ensemble_from_plan(m: CsmModel, plan, cfg: IcrConfig | None = None, max_variants: int = 64) -> Ensemble:
    """Run ``plan`` once per choice of published slot in each ICR phase and
    keep the final outputs that are joints over every variable."""
    from .synthesis import Phase, SynthesisPlan, run_plan

    icr_phases = [p for p in plan.phases if p.mode == "icr"]
    choices = [list(p.cycle or p.inputs) for p in icr_phases]
    members, sources = [], []
    for n, combo in enumerate(itertools.product(*choices)):
        if n >= max_variants:
            log.warning("ensemble_from_plan: stopping after %d variants", max_variants)
            break
        pick = dict(zip((p.id for p in icr_phases), combo))
        phases = tuple(
            Phase(p.id, p.mode, p.inputs, p.cycle, pick.get(p.id, p.select), p.params) for p in plan.phases
        )
        outs = run_plan(m, SynthesisPlan(phases), cfg)
        final = [o for o in outs if o.phase == phases[-1].id and o.id == phases[-1].id]
        for o in final:
            if o.is_joint_over(m.variables):
                members.append(o.dist)
                sources.append(tuple(f"{k}:{v}" for k, v in pick.items()))
    if not members:
        raise ScopeError("plan produced no joint over every variable")
    return Ensemble(members, sources)


# -- optimisation ------------------------------------------------------------


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    n = v.size
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, n + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def _golden(phi: Callable[[float], float], lo: float, hi: float, iters: int = 60) -> float:
    g = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = phi(c), phi(d)
    for _ in range(iters):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = phi(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = phi(d)
    return c if fc <= fd else d


def _descend(fun, w: np.ndarray, tol: float = 1e-10, max_iter: int = 500, h: float = 1e-7) -> np.ndarray:
    fw = fun(w)
    n = w.size
    for _ in range(max_iter):
        # directional derivatives along e_k - w stay inside the simplex
        grad = np.empty(n)
        for k in range(n):
            e = -w.copy()
            e[k] += 1.0
            step = h if np.abs(e).max() > 0 else 0.0
            grad[k] = (fun(w + step * e) - fw) / h if step else 0.0
        grad -= grad.mean()
        scale = np.abs(grad).max()
        if not np.isfinite(scale) or scale == 0:
            break

        def phi(s):
            return fun(project_simplex(w - s * grad))

        s = _golden(phi, 0.0, 1.0 / scale)
        cand = project_simplex(w - s * grad)
        fc = fun(cand)
        if not fc < fw:
            break
        moved = np.abs(cand - w).max()
        w, fw = cand, fc
        if moved < tol:
            break
    return w


def _dedupe(members: Sequence[Distribution]) -> list[list[int]]:
    groups: list[list[int]] = []
    for i, d in enumerate(members):
        for g in groups:
            if np.allclose(members[g[0]].table, d.table, rtol=0, atol=1e-15):
                g.append(i)
                break
        else:
            groups.append([i])
    return groups


def optimize_mixture(
    e: Ensemble, m: CsmModel, measure: str = KL, starts: int = 20, seed: int = 0
) -> MixtureResult:
    """Mixture weights minimizing :func:`model_deviance`.

    Projected gradient descent with golden-section line search from
    ``starts`` points.  Identical members share their weight equally, and the
    result is never worse than the best single member.
    """
    if not e.members:
        raise ValidationError("empty ensemble")
    ev = _Evaluator(m, measure)
    stack = np.stack([_joint_array(d, m) for d in e.members])
    member_dev = ev(stack)
    groups = _dedupe(e.members)
    reps = stack[[g[0] for g in groups]]
    k = len(groups)

    def fun(w):
        mix = np.tensordot(w, reps, axes=1)
        val = float(ev(mix[None, ...])[0])
        return val if np.isfinite(val) else 1e300

    if k == 1:
        best = np.ones(1)
    else:
        rng = np.random.default_rng(seed)
        inits = [np.full(k, 1.0 / k)] + [np.eye(k)[i] for i in range(k)]
        while len(inits) < starts:
            inits.append(rng.dirichlet(np.ones(k)))
        best, best_f = None, np.inf
        for w0 in inits[:max(starts, 1)]:
            w = _descend(fun, w0)
            fw = fun(w)
            if fw < best_f - 1e-15:
                best, best_f = w, fw
        vertex = int(np.argmin(ev(reps)))
        if ev(reps)[vertex] < best_f:
            best = np.eye(k)[vertex]
    weights = np.zeros(len(e.members))
    for g, wg in zip(groups, best):
        weights[g] = wg / len(g)
    weights /= weights.sum()
    mix_table = np.tensordot(weights, stack, axes=1)
    mixture = Distribution(e.members[0].scope, (), mix_table)
    dev = float(ev(mix_table[None, ...])[0])
    return MixtureResult(weights, mixture, dev, ev.measure, member_dev)


def grid_search(e: Ensemble, m: CsmModel, measure: str = KL, step: float | None = None) -> tuple[np.ndarray, float]:
    """Exhaustive search over a weight grid; an optimizer-independent check
    for two or three members."""
    n = len(e.members)
    if n not in (1, 2, 3):
        raise ValidationError("grid_search supports one to three members")
    ev = _Evaluator(m, measure)
    stack = np.stack([_joint_array(d, m) for d in e.members])
    if n == 1:
        return np.ones(1), float(ev(stack)[0])
    step = step or (1e-4 if n == 2 else 1e-3)
    ticks = int(round(1.0 / step))
    if n == 2:
        a = np.arange(ticks + 1) / ticks
        grid = np.stack([a, 1.0 - a], axis=1)
    else:
        i, j = np.meshgrid(np.arange(ticks + 1), np.arange(ticks + 1), indexing="ij")
        ok = i + j <= ticks
        i, j = i[ok], j[ok]
        grid = np.stack([i, j, ticks - i - j], axis=1) / ticks
    best_w, best_f = None, np.inf
    for lo in range(0, len(grid), 20000):
        chunk = grid[lo:lo + 20000]
        vals = ev(np.tensordot(chunk, stack, axes=1))
        vals = np.where(np.isfinite(vals), vals, np.inf)
        k = int(np.argmin(vals))
        if vals[k] < best_f:
            best_w, best_f = chunk[k], float(vals[k])
    return best_w, best_f
