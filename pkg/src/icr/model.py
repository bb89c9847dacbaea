"""Conditionally specified models: blocks, validation and the JSON file format."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import AllZeroSlice, ParseError, ScopeError, UnknownBlock, ValidationError
from .tensor import Distribution, Variable, canonical, condition, marginalize

log = logging.getLogger(__name__)

SATURATED = "saturated"
UNSATURATED = "unsaturated"


@dataclass(frozen=True)
class ConditionalBlock:
    """One model element: the conditional of ``target`` given ``predictors``."""

    id: str
    table: Distribution

    @property
    def target(self) -> tuple[Variable, ...]:
        return self.table.scope

    @property
    def predictors(self) -> tuple[Variable, ...]:
        return self.table.given

    @property
    def scope(self) -> frozenset:
        """c = a ∪ b."""
        return frozenset(self.table.variables)

    def label(self) -> str:
        a = ",".join(v.name for v in self.target)
        b = ",".join(v.name for v in self.predictors)
        return f"{a}|{b}" if b else a


@dataclass(frozen=True)
class CsmModel:
    variables: tuple[Variable, ...]
    blocks: tuple[ConditionalBlock, ...]
    warnings: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if not self.blocks:
            raise ValidationError("model has no blocks")
        ids = [b.id for b in self.blocks]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"duplicate block ids: {ids}")
        declared = set(self.variables)
        for b in self.blocks:
            if not set(b.table.variables) <= declared:
                raise ValidationError(f"block {b.id!r} references undeclared variables")
        notes = _delta_warnings(self)
        if notes and not self.warnings:
            object.__setattr__(self, "warnings", tuple(notes))
            for w in notes:
                log.warning(w)

    @property
    def delta(self) -> tuple[Variable, ...]:
        """Variables that only ever appear as predictors."""
        targets = set().union(*(b.target for b in self.blocks))
        preds = set().union(*(b.predictors for b in self.blocks))
        return canonical(preds - targets)

    def block(self, block_id: str) -> ConditionalBlock:
        for b in self.blocks:
            if b.id == block_id:
                return b
        raise UnknownBlock(f"unknown block {block_id!r}")

    @property
    def block_ids(self) -> tuple[str, ...]:
        return tuple(b.id for b in self.blocks)

    def variable(self, name: str) -> Variable:
        for v in self.variables:
            if v.name == name:
                return v
        raise ScopeError(f"unknown variable {name!r}")

    def vars(self, names: Iterable[str]) -> tuple[Variable, ...]:
        return tuple(self.variable(n) for n in names)

    def subset(self, block_ids: Sequence[str]) -> "CsmModel":
        return CsmModel(self.variables, tuple(self.block(i) for i in block_ids))


def _delta_warnings(m: CsmModel) -> list[str]:
    delta = set(m.delta)
    if not delta:
        return []
    out = []
    for b in m.blocks:
        if not delta <= set(b.predictors):
            out.append(
                f"block {b.id!r} does not condition on every predictor-only variable "
                f"{sorted(v.name for v in delta)}; no permissible updating cycle can exist"
            )
    return out


def classify(m: CsmModel) -> str:
    every = set(m.variables)
    if all(b.scope == every for b in m.blocks):
        return SATURATED
    return UNSATURATED


def make_variables(spec: Sequence[tuple[str, int]]) -> tuple[Variable, ...]:
    return tuple(Variable(name, card, i) for i, (name, card) in enumerate(spec))


def make_block(block_id: str, target, predictors, values, *, allow_undefined: bool = True) -> ConditionalBlock:
    return ConditionalBlock(
        block_id, Distribution.from_values(target, predictors, values, allow_undefined=allow_undefined)
    )


def derive_csm_from_joint(
    joint: Distribution,
    pattern: Sequence[tuple],
    *,
    ids: Sequence[str] | None = None,
    allow_zero: bool = False,
) -> CsmModel:
    """Read off the conditionals named by ``pattern`` from a joint.

    Each pattern entry is ``(target, predictors)`` given as variable names.
    The resulting model is compatible by construction.
    """
    if joint.given:
        raise ScopeError("derive_csm_from_joint needs a joint distribution")
    blocks = []
    for k, (target, preds) in enumerate(pattern):
        tv = joint.resolve(target)
        pv = joint.resolve(preds)
        m = marginalize(joint, tv + pv)
        table = condition(m, pv, allow_zero=allow_zero) if pv else m
        bid = ids[k] if ids else _default_id(tv, pv)
        blocks.append(ConditionalBlock(bid, table))
    return CsmModel(joint.scope, tuple(blocks))


def _default_id(target, preds) -> str:
    a = "".join(_short(v.name) for v in target)
    b = "".join(_short(v.name) for v in preds)
    return f"f{a}|{b}" if b else f"f{a}"


def _short(name: str) -> str:
    return name[1:] if name.startswith("x") and name[1:].isdigit() else name


# -- JSON -------------------------------------------------------------------


def distribution_to_dict(d: Distribution) -> dict:
    s, g = d.names()
    return {
        "variables": [{"name": v.name, "cardinality": v.cardinality} for v in d.variables],
        "scope": s,
        "given": g,
        "values": d.values.tolist(),
    }


def distribution_from_dict(obj: dict, variables: Sequence[Variable] | None = None) -> Distribution:
    """Inverse of :func:`distribution_to_dict`.

    ``variables`` (typically a model's) fixes canonical ordering; otherwise
    the order of the file's ``variables`` list is used.
    """
    try:
        if variables is None:
            variables = make_variables([(v["name"], int(v["cardinality"])) for v in obj["variables"]])
        lookup = {v.name: v for v in variables}
        scope = tuple(lookup[n] for n in obj["scope"])
        given = tuple(lookup[n] for n in obj.get("given", []))
        values = obj["values"]
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed distribution object: {exc}") from exc
    return Distribution.from_values(scope, given, values, allow_undefined=True)


def dump_distribution(d: Distribution, path) -> None:
    Path(path).write_text(json.dumps(distribution_to_dict(d), indent=1))


def load_distribution(path, variables: Sequence[Variable] | None = None) -> Distribution:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return distribution_from_dict(obj, variables)


def model_to_dict(m: CsmModel) -> dict:
    return {
        "variables": [{"name": v.name, "cardinality": v.cardinality} for v in m.variables],
        "blocks": [
            {
                "id": b.id,
                "target": [v.name for v in b.target],
                "predictors": [v.name for v in b.predictors],
                "values": b.table.values.tolist(),
            }
            for b in m.blocks
        ],
        "delta": [v.name for v in m.delta],
    }


def serialize_model(m: CsmModel) -> str:
    return json.dumps(model_to_dict(m), indent=1)


def parse_model(text: bytes | str) -> CsmModel:
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"model is not UTF-8: {exc}") from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(str(exc)) from exc
    return model_from_dict(obj)


def model_from_dict(obj) -> CsmModel:
    if not isinstance(obj, dict):
        raise ValidationError("model must be a JSON object")
    try:
        raw_vars = obj["variables"]
        raw_blocks = obj["blocks"]
        names = [v["name"] for v in raw_vars]
        variables = make_variables([(v["name"], int(v["cardinality"])) for v in raw_vars])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"bad variables section: {exc}") from exc
    if len(set(names)) != len(names):
        raise ValidationError(f"duplicate variable names: {names}")
    if not raw_blocks:
        raise ValidationError("model has no blocks")
    lookup = {v.name: v for v in variables}
    blocks = []
    for rb in raw_blocks:
        try:
            bid = str(rb["id"])
            target = [lookup[n] for n in rb["target"]]
            preds = [lookup[n] for n in rb.get("predictors", [])]
            values = rb["values"]
        except KeyError as exc:
            raise ValidationError(f"block {rb.get('id', '?')!r}: unknown or missing field {exc}") from exc
        if not target:
            raise ValidationError(f"block {bid!r}: empty target")
        if set(target) & set(preds):
            raise ValidationError(f"block {bid!r}: target and predictors overlap")
        if len(set(target)) != len(target) or len(set(preds)) != len(preds):
            raise ValidationError(f"block {bid!r}: repeated variable")
        try:
            blocks.append(make_block(bid, target, preds, values))
        except AllZeroSlice as exc:
            raise ValidationError(f"block {bid!r}: {exc}") from exc
        except ValidationError as exc:
            raise ValidationError(f"block {bid!r}: {exc}") from exc
    m = CsmModel(variables, tuple(blocks))
    if "delta" in obj and obj["delta"] is not None:
        stored = sorted(obj["delta"])
        if stored != sorted(v.name for v in m.delta):
            raise ValidationError(f"stored delta {stored} disagrees with computed {[v.name for v in m.delta]}")
    return m


def load_model(path) -> CsmModel:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ValidationError(f"cannot read model {path}: {exc}") from exc
    return parse_model(data)



def fixture_path(name: str) -> Path:
    """Path of a JSON fixture shipped with the package (``.json`` optional)."""
    from importlib.resources import files

    if not name.endswith(".json"):
        name += ".json"
    path = Path(str(files("icr") / "fixtures" / name))
    if not path.exists():
        raise ValidationError(f"no fixture named {name!r}")
    return path
