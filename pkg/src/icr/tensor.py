"""Dense discrete distributions over named categorical variables.

A :class:`Distribution` stores one axis per variable, scope axes first and
conditioning axes after, each group in canonical (declaration) order.  The
flat view used by files and tables is the Fortran ravel of that array, so the
first-listed variable varies fastest.

Conditional tables may contain *undefined* slices (all zeros) for
conditioning configurations that lie outside the support.  Every other slice
sums to one.
"""

from __future__ import annotations

import math
import string
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import AllZeroSlice, NormalizationWarning, ScopeError, SupportError, ValidationError

SUM_TOL = 1e-12
RENORM_TOL = 1e-6

_LETTERS = string.ascii_letters


@dataclass(frozen=True)
class Variable:
    name: str
    cardinality: int
    index: int = field(default=-1, compare=False, repr=False)

    def __post_init__(self):
        if not self.name:
            raise ValidationError("variable name must be non-empty")
        if int(self.cardinality) != self.cardinality or self.cardinality < 2:
            raise ValidationError(f"variable {self.name!r}: cardinality must be an integer >= 2")


def _order_key(v: Variable):
    return (v.index, v.name)


def canonical(variables: Iterable[Variable]) -> tuple[Variable, ...]:
    """Sort variables into declaration order, rejecting duplicates."""
    out = tuple(sorted(variables, key=_order_key))
    names = [v.name for v in out]
    if len(set(names)) != len(names):
        raise ScopeError(f"duplicate variables in scope: {names}")
    return out


def _cards(variables: Sequence[Variable]) -> tuple[int, ...]:
    return tuple(v.cardinality for v in variables)


class Distribution:
    """Immutable table over ``scope`` conditioned on ``given``.

    The constructor does not check normalization; use :meth:`from_values`
    for validated construction from a flat array.
    """

    __slots__ = ("scope", "given", "table")

    def __init__(self, scope: Iterable[Variable], given: Iterable[Variable] = (), table=None):
        scope = tuple(scope)
        given = tuple(given)
        if set(scope) & set(given):
            raise ScopeError("scope and given must be disjoint")
        arr = np.array(table, dtype=float)
        shape = _cards(scope) + _cards(given)
        if arr.shape != shape:
            if arr.size != math.prod(shape):
                raise ValidationError(f"table of shape {arr.shape} does not fit variables with shape {shape}")
            arr = arr.reshape(shape, order="F")
        # permute into canonical axis order
        cs, cg = canonical(scope), canonical(given)
        old = scope + given
        perm = [old.index(v) for v in cs + cg]
        if perm != list(range(len(perm))):
            arr = np.ascontiguousarray(np.transpose(arr, perm))
        arr.setflags(write=False)
        object.__setattr__(self, "scope", cs)
        object.__setattr__(self, "given", cg)
        object.__setattr__(self, "table", arr)

    def __setattr__(self, name, value):
        raise AttributeError("Distribution is immutable")

    @classmethod
    def from_values(
        cls,
        scope: Iterable[Variable],
        given: Iterable[Variable] = (),
        values=None,
        *,
        allow_undefined: bool = False,
    ) -> "Distribution":
        """Build from a flat array (first-listed variable fastest) and validate.

        Slices off by at most ``RENORM_TOL`` are renormalized with a
        :class:`NormalizationWarning`; larger deviations raise.
        ``allow_undefined`` admits all-zero conditional slices.
        """
        scope, given = canonical(scope), canonical(given)
        arr = np.asarray(values, dtype=float).ravel()
        shape = _cards(scope) + _cards(given)
        if arr.size != math.prod(shape):
            raise ValidationError(f"expected {math.prod(shape)} values, got {arr.size}")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise ValidationError("values must be finite and non-negative")
        arr = arr.reshape(shape, order="F")
        sums = arr.sum(axis=tuple(range(len(scope))))
        zero = sums == 0
        if np.any(zero) and not (allow_undefined and given):
            raise AllZeroSlice("distribution has a conditioning configuration with no mass")
        dev = np.atleast_1d(np.abs(sums - 1.0))
        dev[np.atleast_1d(zero)] = 0.0
        worst = float(dev.max(initial=0.0))
        if worst > RENORM_TOL:
            raise ValidationError(f"values do not sum to 1 (max deviation {worst:.3g})")
        if worst > SUM_TOL:
            warnings.warn(f"renormalizing slices off by {worst:.3g}", NormalizationWarning, stacklevel=2)
            safe = np.where(zero, 1.0, sums)
            arr = arr / safe
        return cls(scope, given, arr)

    # -- views --------------------------------------------------------------

    @property
    def variables(self) -> tuple[Variable, ...]:
        return self.scope + self.given

    @property
    def values(self) -> np.ndarray:
        return self.table.ravel(order="F")

    @property
    def is_joint(self) -> bool:
        return not self.given

    def names(self) -> tuple[list[str], list[str]]:
        return [v.name for v in self.scope], [v.name for v in self.given]

    def slice_sums(self) -> np.ndarray:
        """Mass per conditioning configuration (a scalar array for joints)."""
        return self.table.sum(axis=tuple(range(len(self.scope))))

    def undefined_mask(self) -> np.ndarray:
        return self.slice_sums() == 0

    def resolve(self, items) -> tuple[Variable, ...]:
        """Map names or Variables onto this distribution's variables."""
        lookup = {v.name: v for v in self.variables}
        out = []
        for it in items:
            name = it.name if isinstance(it, Variable) else it
            if name not in lookup:
                raise ScopeError(f"variable {name!r} not in distribution over {sorted(lookup)}")
            out.append(lookup[name])
        return tuple(out)

    def __eq__(self, other):
        if not isinstance(other, Distribution):
            return NotImplemented
        return (
            self.scope == other.scope
            and self.given == other.given
            and np.array_equal(self.table, other.table)
        )

    __hash__ = None

    def __repr__(self):
        s, g = self.names()
        tag = ",".join(s) + (("|" + ",".join(g)) if g else "")
        return f"Distribution({tag}; {self.table.size} cells)"


def uniform(scope: Iterable[Variable], given: Iterable[Variable] = ()) -> Distribution:
    scope, given = canonical(scope), canonical(given)
    n = math.prod(_cards(scope))
    return Distribution(scope, given, np.full(_cards(scope) + _cards(given), 1.0 / n))


def _subscripts(variables: Sequence[Variable], letters: dict) -> str:
    return "".join(letters[v] for v in variables)


def _letter_map(*groups: Sequence[Variable]) -> dict:
    letters: dict = {}
    for group in groups:
        for v in group:
            if v not in letters:
                if len(letters) >= len(_LETTERS):
                    raise ScopeError("too many variables for one contraction")
                letters[v] = _LETTERS[len(letters)]
    return letters


def normalize(d: Distribution) -> Distribution:
    sums = d.slice_sums()
    if np.any(sums <= 0):
        raise AllZeroSlice("cannot normalize: a conditioning configuration has zero mass")
    return Distribution(d.scope, d.given, d.table / sums)


def marginalize(d: Distribution, keep) -> Distribution:
    """Sum out every scope variable not in ``keep``; conditioning is untouched."""
    keep = set(d.resolve(keep))
    if not keep <= set(d.scope):
        raise ScopeError("marginalize can only keep scope variables")
    if len(keep) == len(d.scope):
        return d
    axes = tuple(i for i, v in enumerate(d.scope) if v not in keep)
    kept = tuple(v for v in d.scope if v in keep)
    return Distribution(kept, d.given, d.table.sum(axis=axes))


def compose(cond: Distribution, marg: Distribution) -> Distribution:
    """Multiply a conditional by the distribution of its conditioning variables.

    ``marg.scope`` together with ``marg.given`` must be exactly
    ``cond.given``.  The product lives on ``cond.scope + marg.scope`` and keeps
    ``marg.given`` as its conditioning set.
    """
    if set(marg.scope) | set(marg.given) != set(cond.given):
        raise ScopeError(
            f"compose: marginal over {marg.names()} does not match conditioning set "
            f"{[v.name for v in cond.given]}"
        )
    if cond.given:
        undefined = cond.undefined_mask()
        if np.any(undefined):
            letters = _letter_map(cond.given)
            m_sub = _subscripts(marg.scope + marg.given, letters)
            g_sub = _subscripts(cond.given, letters)
            mass = np.einsum(f"{m_sub}->{g_sub}", marg.table)
            if np.any(mass[undefined] > 0):
                raise SupportError("marginal puts mass where the conditional is undefined")
    out_scope = canonical(cond.scope + marg.scope)
    out_given = marg.given
    letters = _letter_map(out_scope, out_given)
    expr = (
        f"{_subscripts(cond.variables, letters)},{_subscripts(marg.variables, letters)}"
        f"->{_subscripts(out_scope + out_given, letters)}"
    )
    return Distribution(out_scope, out_given, np.einsum(expr, cond.table, marg.table))


def condition(d: Distribution, on, *, allow_zero: bool = False) -> Distribution:
    """Conditional of ``d`` given the scope variables ``on``.

    Zero-mass conditioning configurations raise :class:`AllZeroSlice` unless
    ``allow_zero`` is set, in which case they become undefined (all-zero)
    slices.
    """
    on = set(d.resolve(on))
    if not on <= set(d.scope):
        raise ScopeError("condition: variables must come from the scope")
    if on == set(d.scope):
        raise ScopeError("condition: nothing left in scope")
    m = marginalize(d, on)
    rest = tuple(v for v in d.scope if v not in on)
    new_given = canonical(tuple(on) + d.given)
    # m.variables is a canonical subsequence of d.variables, so reshape broadcasts
    shape = [1] * len(d.variables)
    for v in m.variables:
        shape[d.variables.index(v)] = v.cardinality
    denom = m.table.reshape(shape)
    if np.any(denom == 0):
        if not allow_zero:
            raise AllZeroSlice("condition: a conditioning configuration has zero mass")
        table = np.where(denom > 0, d.table / np.where(denom > 0, denom, 1.0), 0.0)
    else:
        table = d.table / denom
    return Distribution(rest, new_given, _regroup(table, d.variables, rest, new_given))


def _regroup(table, variables, scope, given):
    perm = [variables.index(v) for v in scope + given]
    return np.transpose(table, perm)


@dataclass(frozen=True)
class DivergenceReport:
    kl_forward: float
    kl_backward: float
    symmetric: float
    total_variation: float
    support_mismatch: bool = False


_NEAR_MINUS_ONE = -1.0 + 2.0 ** -53


def _phi(r: np.ndarray) -> np.ndarray:
    """(1 + r) log(1 + r) - r for r >= -1, accurate for small ``r``."""
    a = np.abs(r)
    if not a.size or np.maximum.reduce(a) < 1e-4:
        return _phi_series(r)
    # the clamp keeps log1p finite at r = -1, where the product is 0 * finite
    out = (1.0 + r) * np.log1p(np.maximum(r, _NEAR_MINUS_ONE)) - r
    small = a < 1e-4
    if np.logical_or.reduce(small):
        out[small] = _phi_series(r[small])
    return out


def _phi_series(r: np.ndarray) -> np.ndarray:
    return r * r * (0.5 - r * (1.0 / 6.0 - r * (1.0 / 12.0)))


def kl_values(p: np.ndarray, q: np.ndarray) -> float:
    """sum p log(p/q) in nats with 0 log 0 = 0; +inf if p > 0 where q = 0.

    Evaluated as ``sum q phi((p - q)/q)``, which equals the textbook sum when
    both arguments carry the same total mass and has no cancellation, so
    near-equal distributions get accurate tiny values instead of rounding
    noise.
    """
    p = np.asarray(p, dtype=float).ravel()
    q = np.asarray(q, dtype=float).ravel()
    # min-reductions are cheaper than .any() on the tiny arrays of a run
    if q.size and np.minimum.reduce(q) <= 0:
        dead = q <= 0
        if np.any(p[dead] > 0):
            return math.inf
        live = ~dead
        p, q = p[live], q[live]
    return float(np.dot(q, _phi((p - q) / q)))


def sym_kl_values(p: np.ndarray, q: np.ndarray) -> float:
    """I(p; q) + I(q; p) = sum (p - q) log(p / q); every term is >= 0."""
    p = np.asarray(p, dtype=float).ravel()
    q = np.asarray(q, dtype=float).ravel()
    if p.size and (np.minimum.reduce(p) <= 0 or np.minimum.reduce(q) <= 0):
        pz, qz = p == 0, q == 0
        if np.any(pz != qz):
            return math.inf
        live = ~pz
        p, q = p[live], q[live]
    d = p - q
    return float(np.dot(d, np.log1p(d / q)))


def _check_same(p: Distribution, q: Distribution):
    if p.scope != q.scope or p.given != q.given:
        raise ScopeError(f"divergence needs identical variables: {p.names()} vs {q.names()}")


def kl(p: Distribution, q: Distribution) -> DivergenceReport:
    _check_same(p, q)
    fwd = kl_values(p.table, q.table)
    bwd = kl_values(q.table, p.table)
    diff = np.abs(p.table - q.table)
    if p.given:
        tv = 0.5 * float(diff.sum(axis=tuple(range(len(p.scope)))).max())
    else:
        tv = 0.5 * float(diff.sum())
    return DivergenceReport(
        kl_forward=fwd,
        kl_backward=bwd,
        symmetric=sym_kl_values(p.table, q.table),
        total_variation=tv,
        support_mismatch=math.isinf(fwd) or math.isinf(bwd),
    )


def sym_kl(p: Distribution, q: Distribution) -> float:
    _check_same(p, q)
    return sym_kl_values(p.table, q.table)


def total_variation(p: Distribution, q: Distribution) -> float:
    return kl(p, q).total_variation


def reorder_like(d: Distribution, variables: Sequence[Variable]) -> np.ndarray:
    """Return ``d.table`` with axes permuted to the order of ``variables``."""
    perm = [d.variables.index(v) for v in variables]
    return np.transpose(d.table, perm)
