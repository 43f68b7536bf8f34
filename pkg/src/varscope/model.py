"""Shared vocabulary: hierarchy descriptions, expansion plans and term reports.

An expansion plan is an ordered sequence of disjoint blocks of manifest
variables. Applying the law of total variance once per block, always inside
the expectation-of-variance term, gives ``u + 1`` terms::

    Var(Y | D) = T_0 + T_u + ... + T_1

where ``T_0 = E Var(Y | D, B_1..B_u)`` and ``T_k`` carries the variance
operator over block ``B_k`` given ``B_1..B_{k-1}``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

__all__ = [
    "PlanError",
    "DomainError",
    "VariableId",
    "Level",
    "HierarchySpec",
    "ExpansionPlan",
    "TermId",
    "TermReport",
    "validate_plan",
    "spec_from_json",
    "spec_to_json",
    "CLOSED_FORM",
    "MONTE_CARLO",
    "EMPIRICAL_DRAWS",
]

CLOSED_FORM = "closed_form"
MONTE_CARLO = "monte_carlo"
EMPIRICAL_DRAWS = "empirical_draws"
_METHODS = (CLOSED_FORM, MONTE_CARLO, EMPIRICAL_DRAWS)


class PlanError(ValueError):
    """An expansion plan violates the manifest/latent rules."""


class DomainError(ValueError):
    """A parameter lies outside the domain where a formula is defined."""


@dataclass(frozen=True)
class VariableId:
    name: str
    index: int

    def __post_init__(self):
        if not self.name:
            raise ValueError("variable name must be non-empty")
        if self.index < 1:
            raise ValueError(f"variable index must be >= 1, got {self.index}")


@dataclass(frozen=True)
class Level:
    """One level of the hierarchy: a variable with a distribution tag."""

    var: VariableId
    dist: str
    params: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class HierarchySpec:
    """Declarative K-level hierarchical model.

    ``likelihood`` is a mapping with at least a ``dist`` tag. ``data`` is an
    opaque handle; the engines never look inside it except through the
    family-specific parameter records.
    """

    levels: tuple[Level, ...]
    likelihood: Mapping[str, Any]
    data: Any = None

    def __post_init__(self):
        names = [lv.var.name for lv in self.levels]
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise ValueError(f"duplicate level names: {dup}")
        for pos, lv in enumerate(self.levels, start=1):
            if lv.var.index != pos:
                raise ValueError(
                    f"level {lv.var.name!r} has index {lv.var.index}, expected {pos}"
                )
            refs = lv.params.get("depends_on", ()) if isinstance(lv.params, Mapping) else ()
            for ref in refs:
                if ref not in names[: pos - 1]:
                    raise ValueError(
                        f"level {lv.var.name!r} references {ref!r}, which is not an earlier level"
                    )
        for ref in self.likelihood.get("depends_on", ()):
            if ref not in names:
                raise ValueError(f"likelihood references undeclared level {ref!r}")

    @property
    def K(self) -> int:
        return len(self.levels)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(lv.var.name for lv in self.levels)

    def variable(self, name: str) -> VariableId:
        for lv in self.levels:
            if lv.var.name == name:
                return lv.var
        raise KeyError(name)

    @classmethod
    def from_names(cls, names: Sequence[str], likelihood=None, data=None) -> "HierarchySpec":
        levels = tuple(
            Level(VariableId(n, i), "unspecified") for i, n in enumerate(names, start=1)
        )
        return cls(levels, likelihood or {"dist": "unspecified"}, data)


@dataclass(frozen=True)
class ExpansionPlan:
    """Ordered blocks of manifest variables plus the latent remainder.

    Blocks are stored as tuples of variable names. Construction does not
    validate; use :func:`validate_plan` against a :class:`HierarchySpec`.
    """

    blocks: tuple[tuple[str, ...], ...]
    latent: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(tuple(b) for b in self.blocks))
        object.__setattr__(self, "latent", tuple(self.latent))

    @property
    def u(self) -> int:
        return len(self.blocks)

    @property
    def M(self) -> int:
        return sum(len(b) for b in self.blocks)

    @property
    def manifest(self) -> tuple[str, ...]:
        return tuple(n for b in self.blocks for n in b)

    def prefix(self, k: int) -> tuple[str, ...]:
        """Names in blocks ``1..k``."""
        return tuple(n for b in self.blocks[:k] for n in b)

    def label(self) -> str:
        return "|".join(",".join(b) for b in self.blocks)

    @classmethod
    def parse(cls, text: str, universe: Sequence[str] | None = None) -> "ExpansionPlan":
        """Parse ``"mu|lambda2"`` or ``"a,b|c"``; the rest of ``universe`` is latent."""
        text = text.strip()
        blocks = [] if not text else [
            tuple(s.strip() for s in part.split(",") if s.strip()) for part in text.split("|")
        ]
        latent = ()
        if universe is not None:
            used = {n for b in blocks for n in b}
            latent = tuple(n for n in universe if n not in used)
        return cls(tuple(blocks), latent)

    def to_json_obj(self) -> dict:
        return {"blocks": [list(b) for b in self.blocks], "latent": list(self.latent)}

    @classmethod
    def from_json_obj(cls, obj: Mapping) -> "ExpansionPlan":
        return cls(tuple(tuple(b) for b in obj["blocks"]), tuple(obj.get("latent", ())))


def validate_plan(spec: HierarchySpec, plan: ExpansionPlan) -> ExpansionPlan:
    """Check a plan against the variables of ``spec`` and return it unchanged."""
    known = set(spec.names)
    seen: set[str] = set()
    for pos, block in enumerate(plan.blocks, start=1):
        if not block:
            raise PlanError(f"block {pos} is empty")
        for name in block:
            if name not in known:
                raise PlanError(f"unknown variable {name!r} in block {pos}")
            if name in seen:
                raise PlanError(f"duplicate variable {name!r} in block {pos}")
            seen.add(name)
    for name in plan.latent:
        if name not in known:
            raise PlanError(f"unknown latent variable {name!r}")
        if name in seen:
            raise PlanError(f"variable {name!r} is both manifest and latent")
        seen.add(name)
    missing = known - seen
    if missing:
        raise PlanError(f"variables not assigned to a block or latent: {sorted(missing)}")
    if not plan.u <= plan.M <= spec.K:
        raise PlanError(f"need u <= M <= K, got u={plan.u}, M={plan.M}, K={spec.K}")
    return plan


@dataclass(frozen=True)
class TermId:
    plan: ExpansionPlan
    k: int

    def __post_init__(self):
        if not 0 <= self.k <= self.plan.u:
            raise ValueError(f"term index {self.k} outside 0..{self.plan.u}")


@dataclass(frozen=True)
class TermReport:
    """Term values of one expansion.

    ``terms[k]`` is ``T_k``; ``terms[0]`` is the leading expectation of the
    conditional variance. ``total`` is computed independently of the terms
    wherever the engine can, so :meth:`conservation_gap` is a real check.
    """

    plan: ExpansionPlan
    terms: tuple[float, ...]
    total: float
    method: str = CLOSED_FORM
    diagnostics: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(float(t) for t in self.terms))
        object.__setattr__(self, "total", float(self.total))
        if len(self.terms) != self.plan.u + 1:
            raise ValueError(
                f"expected {self.plan.u + 1} terms for a {self.plan.u}-block plan, got {len(self.terms)}"
            )
        if self.method not in _METHODS:
            raise ValueError(f"unknown method {self.method!r}")

    def __getitem__(self, k: int) -> float:
        return self.terms[k]

    def __len__(self) -> int:
        return len(self.terms)

    @property
    def term_ids(self) -> tuple[TermId, ...]:
        return tuple(TermId(self.plan, k) for k in range(len(self.terms)))

    def as_dict(self) -> dict[TermId, float]:
        return dict(zip(self.term_ids, self.terms))

    def ordered(self) -> tuple[float, ...]:
        """Terms in written order ``(T_0, T_u, ..., T_1)``."""
        return (self.terms[0],) + tuple(reversed(self.terms[1:]))

    @property
    def term_sum(self) -> float:
        return math.fsum(self.terms)

    def conservation_gap(self) -> float:
        return abs(self.term_sum - self.total)

    def error_bound(self) -> float:
        """Allowed |sum - total| for this report's method."""
        if self.method == CLOSED_FORM:
            return 1e-12 * max(1.0, abs(self.total))
        se = self.diagnostics.get("total_se", 0.0)
        se_sum = self.diagnostics.get("sum_se", 0.0)
        if self.method == EMPIRICAL_DRAWS and not se and not se_sum:
            return 1e-12 * max(1.0, abs(self.total))
        return 3.0 * math.hypot(se, se_sum)

    def is_conserved(self) -> bool:
        return self.conservation_gap() <= self.error_bound()

    def to_json_obj(self) -> dict:
        diag = {k: v for k, v in self.diagnostics.items()}
        return {
            "plan": self.plan.to_json_obj(),
            "terms": list(self.terms),
            "total": self.total,
            "method": self.method,
            "diagnostics": _jsonable(diag),
        }


def _jsonable(obj):
    if isinstance(obj, Mapping):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if hasattr(obj, "item"):
        return obj.item()
    return obj


# -- JSON document -----------------------------------------------------------

def spec_from_json(doc: str | Mapping) -> tuple[HierarchySpec, ExpansionPlan | None]:
    """Read ``{"K", "levels", "likelihood", "plan"}`` into a spec and optional plan."""
    obj = json.loads(doc) if isinstance(doc, str) else doc
    levels = tuple(
        Level(VariableId(lv["name"], i), lv.get("dist", "unspecified"), dict(lv.get("params", {})))
        for i, lv in enumerate(obj["levels"], start=1)
    )
    spec = HierarchySpec(levels, dict(obj.get("likelihood", {})), obj.get("data"))
    if "K" in obj and obj["K"] != spec.K:
        raise ValueError(f"K={obj['K']} but {spec.K} levels declared")
    plan = None
    if obj.get("plan") is not None:
        plan = validate_plan(spec, ExpansionPlan.from_json_obj(obj["plan"]))
    return spec, plan


def spec_to_json(spec: HierarchySpec, plan: ExpansionPlan | None = None) -> str:
    obj: dict[str, Any] = {
        "K": spec.K,
        "levels": [
            {"name": lv.var.name, "dist": lv.dist, "params": dict(lv.params)} for lv in spec.levels
        ],
        "likelihood": dict(spec.likelihood),
    }
    if plan is not None:
        obj["plan"] = plan.to_json_obj()
    if spec.data is not None:
        obj["data"] = spec.data
    return json.dumps(obj, sort_keys=False)


def names_of(items: Iterable) -> tuple[str, ...]:
    return tuple(getattr(x, "name", x) for x in items)
