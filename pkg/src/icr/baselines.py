"""Markov-chain references for models made of full conditionals.

States are full joint configurations indexed in Fortran order over the
model's variables (first variable fastest), the same layout as the flat view
of a joint :class:`~icr.tensor.Distribution`.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import kernels
from .engine import IcrConfig, run_icr
from .errors import InstanceTooLarge, NotFullConditional, ReducibleWarning, ValidationError
from .model import CsmModel
from .tensor import Distribution, sym_kl_values

log = logging.getLogger(__name__)

MAX_STATES = 2 ** 20
DENSE_LIMIT = 1024
RNG_NAME = "numpy PCG64, streams from SeedSequence(seed).spawn(n_chains)"
CHUNK = 1 << 16


@dataclass
class TransitionMatrix:
    block: str
    cards: tuple[int, ...]
    matrix: sp.csr_matrix

    @property
    def n_states(self) -> int:
        return self.matrix.shape[0]

    def apply(self, q: np.ndarray) -> np.ndarray:
        """Row vector times matrix."""
        return self.matrix.T @ q


@dataclass
class PowerResult:
    dist: Distribution
    iterations: int
    trace: list[float]
    converged: bool
    reducible: bool
    row_spread: float | None
    seconds: float = 0.0
    history: list[np.ndarray] = field(default_factory=list, repr=False)


@dataclass
class SampleTrace:
    seed: int
    burn_in: int
    counts: np.ndarray
    chain: int = 0
    backend: str = ""

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    def empirical(self, variables) -> Distribution:
        if self.n == 0:
            raise ValidationError("empty sample")
        cards = tuple(v.cardinality for v in variables)
        return Distribution(variables, (), (self.counts / self.n).reshape(cards, order="F"))


def _check_size(m: CsmModel) -> tuple[int, ...]:
    cards = tuple(v.cardinality for v in m.variables)
    if math.prod(cards) > MAX_STATES:
        raise InstanceTooLarge(f"{math.prod(cards)} joint states exceed the limit of {MAX_STATES}")
    return cards


def _require_full(m: CsmModel, block_id: str):
    blk = m.block(block_id)
    if set(blk.table.variables) != set(m.variables):
        raise NotFullConditional(f"block {block_id!r} is not a full conditional")
    return blk


def _target_moves(m: CsmModel, block_id: str):
    """(next_state, prob) arrays of shape (n_states, n_target_configs)."""
    blk = _require_full(m, block_id)
    cards = _check_size(m)
    n = math.prod(cards)
    coords = np.array(np.unravel_index(np.arange(n), cards, order="F"))
    tpos = [m.variables.index(v) for v in blk.target]
    ppos = [m.variables.index(v) for v in blk.predictors]
    tcards = tuple(v.cardinality for v in blk.target)
    k = math.prod(tcards)
    tcoords = np.array(np.unravel_index(np.arange(k), tcards, order="F"))
    pidx = tuple(coords[p] for p in ppos)
    nxt = np.empty((n, k), dtype=np.int64)
    prob = np.empty((n, k))
    undefined = blk.table.undefined_mask()[pidx] if ppos else np.zeros(n, bool)
    for j in range(k):
        new = coords.copy()
        for axis, p in enumerate(tpos):
            new[p] = tcoords[axis, j]
        nxt[:, j] = np.ravel_multi_index(tuple(new), cards, order="F")
        prob[:, j] = blk.table.table[tuple(tcoords[:, j]) + pidx]
    # configurations outside the block's support keep their state
    if np.any(undefined):
        here = np.arange(n)[undefined]
        nxt[undefined, :] = here[:, None]
        prob[undefined, :] = 0.0
        prob[undefined, 0] = 1.0
    return nxt, prob


def transition_matrix(m: CsmModel, block_id: str) -> TransitionMatrix:
    """Markov kernel that redraws ``block_id``'s target from its conditional."""
    nxt, prob = _target_moves(m, block_id)
    n, k = nxt.shape
    rows = np.repeat(np.arange(n), k)
    mat = sp.csr_matrix((prob.ravel(), (rows, nxt.ravel())), shape=(n, n))
    mat.sum_duplicates()
    return TransitionMatrix(block_id, tuple(v.cardinality for v in m.variables), mat)


def cycle_matrix(m: CsmModel, order: Sequence[str]) -> sp.csr_matrix:
    mats = [transition_matrix(m, b).matrix for b in order]
    out = mats[0]
    for t in mats[1:]:
        out = out @ t
    return out.tocsr()


_sym = sym_kl_values


def power_iterate(
    m: CsmModel, order: Sequence[str], tol: float = 1e-10, max_iter: int = 10000, keep_history: bool = False
) -> PowerResult:
    """Row average of the ``k``-th power of the one-sweep matrix.

    The row average of ``T^k`` is the uniform vector pushed through ``k``
    sweeps, which is what is iterated.  At the stopping point, for up to
    ``DENSE_LIMIT`` states, ``T^k`` is formed and rows that disagree by more
    than 1e-6 raise a :class:`ReducibleWarning`.
    """
    started = time.perf_counter()
    order = list(order)
    big = cycle_matrix(m, order)
    n = big.shape[0]
    bt = big.T.tocsr()
    p = np.full(n, 1.0 / n)
    trace = []
    history = [p] if keep_history else []
    converged = False
    k = 0
    for k in range(1, max_iter + 1):
        nxt = bt @ p
        d = _sym(p, nxt)
        trace.append(d)
        p = nxt
        if keep_history:
            history.append(p)
        if d < tol:
            converged = True
            break
    spread = None
    reducible = False
    if n <= DENSE_LIMIT:
        powered = np.linalg.matrix_power(big.toarray(), k)
        spread = float(np.abs(powered - powered.mean(axis=0)).max())
        if spread > 1e-6:
            reducible = True
            warnings.warn(
                f"rows of the powered transition matrix differ by {spread:.3g}; the chain looks reducible",
                ReducibleWarning,
                stacklevel=2,
            )
    cards = tuple(v.cardinality for v in m.variables)
    dist = Distribution(m.variables, (), p.reshape(cards, order="F"))
    return PowerResult(dist, k, trace, converged, reducible, spread, time.perf_counter() - started, history)


def _chain_tables(m: CsmModel, order: Sequence[str]):
    moves = [_target_moves(m, b) for b in order]
    n = moves[0][0].shape[0]
    kmax = max(nx.shape[1] for nx, _ in moves)
    nb = len(moves)
    next_state = np.zeros((nb, n, kmax), dtype=np.int64)
    cdf = np.ones((nb, n, kmax))
    kcount = np.zeros(nb, dtype=np.int64)
    for b, (nx, pr) in enumerate(moves):
        k = nx.shape[1]
        next_state[b, :, :k] = nx
        next_state[b, :, k:] = nx[:, -1:]
        cdf[b, :, :k] = np.cumsum(pr, axis=1)
        kcount[b] = k
    return next_state, cdf, kcount


def gibbs_sample(
    m: CsmModel,
    order: Sequence[str],
    n: int,
    burn_in: int = 0,
    seed: int = 0,
    chain: int = 0,
    init_state: int | None = None,
    backend: str | None = None,
    checkpoints: Sequence[int] = (),
) -> SampleTrace | tuple[SampleTrace, list[np.ndarray]]:
    """Systematic-scan Gibbs sampler, one recorded draw per sweep.

    Chain ``chain`` draws from stream ``SeedSequence(seed).spawn(chain + 1)[chain]``.
    The start state is uniform over all states from that stream, followed by
    ``burn_in`` unrecorded sweeps.  With ``checkpoints`` (cumulative draw
    counts) the count vectors at those points are returned as well.
    """
    if n < 0 or burn_in < 0:
        raise ValidationError("n and burn_in must be non-negative")
    run = {"cython": kernels.run_chain_c, "python": kernels.run_chain_py, None: kernels.run_chain}[backend]
    if run is None:
        raise ValidationError("compiled kernel is not available")
    name = backend or kernels.BACKEND
    next_state, cdf, kcount = _chain_tables(m, order)
    n_states = next_state.shape[1]
    nb = next_state.shape[0]
    stream = np.random.SeedSequence(seed).spawn(chain + 1)[chain]
    rng = np.random.Generator(np.random.PCG64(stream))
    state = int(rng.integers(n_states)) if init_state is None else int(init_state)
    counts = np.zeros(n_states, dtype=np.int64)
    total = burn_in + n
    marks = sorted(int(c) for c in checkpoints)
    snaps: list[np.ndarray] = []
    done = 0
    while done < total:
        size = min(CHUNK, total - done)
        # cut chunks at checkpoints so snapshots are exact
        for c in marks:
            edge = burn_in + c
            if done < edge < done + size:
                size = edge - done
                break
        u = rng.random((size, nb))
        record_from = max(0, burn_in - done)
        state = run(next_state, cdf, kcount, u, state, counts, min(record_from, size))
        done += size
        for c in marks:
            if done == burn_in + c and len(snaps) < len(marks):
                snaps.append(counts.copy())
    trace = SampleTrace(seed, burn_in, counts, chain, name)
    if marks:
        return trace, snaps
    return trace


# -- comparison --------------------------------------------------------------


@dataclass
class CompareReport:
    rows: list[dict]
    header: dict

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("# schema: icr-compare/1\n")
        for k, v in self.header.items():
            buf.write(f"# {k}: {v}\n")
        w = csv.DictWriter(buf, fieldnames=["method", "step", "draws", "sym_kl", "seconds"], lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({**r, "sym_kl": repr(float(r["sym_kl"]))})
        return buf.getvalue()

    def series(self, method: str) -> list[float]:
        return [float(r["sym_kl"]) for r in self.rows if r["method"] == method]

    def seconds(self, method: str) -> float:
        return float(next(r["seconds"] for r in self.rows if r["method"] == method))


def _best_time(fn, repeats: int):
    best = math.inf
    out = None
    for _ in range(max(1, repeats)):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return out, best


def compare_report(
    m: CsmModel,
    order: Sequence[str],
    reference: Distribution | None = None,
    *,
    icr_cfg: IcrConfig | None = None,
    power_tol: float = 1e-10,
    gs_n: int = 1_000_000,
    gs_burn_in: int = 100_000,
    batches: int = 5,
    seed: int = 0,
    chain: int = 0,
    repeats: int = 3,
) -> CompareReport:
    """Divergence to ``reference`` per ICR cycle, power step and GS batch.

    GS runs ``batches`` consecutive batches of ``gs_n`` draws on one chain;
    each row reports the cumulative empirical distribution.  Wall times are
    the minimum over ``repeats`` runs (GS is timed once).  Without a
    reference the power-method result is used.
    """
    order = list(order)
    base = icr_cfg or IcrConfig()
    cfg = IcrConfig(base.tol_m, base.tol_pi, base.max_cycles, base.init, base.seed, base.plateau_cycles,
                    base.plateau_rtol, keep_history=True)
    icr_run, icr_secs = _best_time(lambda: run_icr(m, order, cfg), repeats)
    power, power_secs = _best_time(lambda: power_iterate(m, order, power_tol, keep_history=True), repeats)
    if reference is None:
        reference = power.dist
    ref = reference.values
    rows = []
    for t, slots in enumerate(icr_run.history[1:]):
        rows.append({"method": "icr", "step": t + 1, "draws": "", "sym_kl": _sym(slots[-1].values, ref),
                     "seconds": icr_secs})
    for k, p in enumerate(power.history[1:]):
        rows.append({"method": "power", "step": k + 1, "draws": "", "sym_kl": _sym(p, ref), "seconds": power_secs})
    marks = [gs_n * (b + 1) for b in range(batches)]
    t0 = time.perf_counter()
    trace, snaps = gibbs_sample(m, order, gs_n * batches, gs_burn_in, seed, chain=chain, checkpoints=marks)
    gs_secs = time.perf_counter() - t0
    for b, c in enumerate(snaps):
        rows.append({"method": "gibbs", "step": b + 1, "draws": marks[b],
                     "sym_kl": _sym(c / c.sum(), ref), "seconds": gs_secs})
    header = {
        "order": ",".join(order),
        "rng": RNG_NAME,
        "seed": seed,
        "chain": chain,
        "gs_burn_in": gs_burn_in,
        "gs_batch": gs_n,
        "kernel": trace.backend,
    }
    return CompareReport(rows, header)
