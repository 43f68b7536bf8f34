"""Conditional-independence bookkeeping and zero-term implications.

Symbols are plain strings: ``"Y"`` for the future observation, ``"D"`` for
the data and ``"V1".."VK"`` (or any other names) for hierarchy levels.

Three pieces:

* :func:`derive_ci` closes a set of statements under a small, sound rule set
  (splitting ``(Y, D)`` statements, factoring a level that is independent of
  all others given the data, and decomposition on the right-hand side).
* :func:`reduce_plan` drops trailing blocks that the assumptions make
  irrelevant to ``(Y, D)``.
* :func:`propagate_zero_terms` spreads known zero terms across the
  single-variable orderings of ``K`` levels. A term ``T^pi_k`` depends only
  on which variable sits at position ``k`` and on the set of variables
  before it, so orderings sharing both give equal terms (two-sided edges).
  If a variable is independent of all the others given the data, a zero for
  it with predecessor set ``P`` also forces a zero for every smaller
  predecessor set (one-sided edges, drawn for sets one element smaller).
"""
from __future__ import annotations

import itertools
import json
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .model import ExpansionPlan, TermId

__all__ = [
    "Y",
    "DATA",
    "CIStatement",
    "ZeroFact",
    "ImplicationGraph",
    "ci",
    "derive_ci",
    "entails",
    "reduce_plan",
    "ordering_plan",
    "implication_graph",
    "propagate_zero_terms",
    "parse_term",
    "node_label",
    "load_ci_json",
]

Y = "Y"
DATA = "D"

TWO_SIDED = "two_sided"
ONE_SIDED = "one_sided"


@dataclass(frozen=True)
class CIStatement:
    """``left`` independent of ``right`` given ``given``."""

    left: frozenset
    right: frozenset
    given: frozenset = frozenset()

    def __post_init__(self):
        for name in ("left", "right", "given"):
            v = getattr(self, name)
            object.__setattr__(self, name, frozenset([v] if isinstance(v, str) else v))
        if not self.left or not self.right:
            raise ValueError("both sides of an independence statement must be non-empty")
        if self.left & self.right:
            raise ValueError(f"left and right overlap: {sorted(self.left & self.right)}")
        if self.given & (self.left | self.right):
            raise ValueError("conditioning set overlaps the independent sets")
        if Y in self.right or Y in self.given:
            raise ValueError("Y may only appear on the left")
        if DATA in self.right:
            raise ValueError("D may appear on the left or in the conditioning set only")

    def swapped(self) -> "CIStatement":
        return CIStatement(self.right, self.left, self.given)

    def __str__(self):
        def fmt(s):
            return ",".join(sorted(s)) or "{}"
        return f"{fmt(self.left)} _||_ {fmt(self.right)} | {fmt(self.given)}"

    def to_json_obj(self) -> dict:
        return {"left": sorted(self.left), "right": sorted(self.right), "given": sorted(self.given)}

    @classmethod
    def from_json_obj(cls, obj) -> "CIStatement":
        return cls(frozenset(obj["left"]), frozenset(obj["right"]), frozenset(obj.get("given", ())))


def ci(left, right, given=()) -> CIStatement:
    """Shorthand constructor accepting strings or iterables."""
    def fs(x):
        return frozenset([x]) if isinstance(x, str) else frozenset(x)
    return CIStatement(fs(left), fs(right), fs(given))


def _nonempty_subsets(s: frozenset):
    items = sorted(s)
    for r in range(1, len(items) + 1):
        for c in itertools.combinations(items, r):
            yield frozenset(c)


def _subsets(items):
    items = sorted(items)
    for r in range(len(items) + 1):
        for c in itertools.combinations(items, r):
            yield frozenset(c)


def _levels_in(stmts: Iterable[CIStatement]) -> frozenset:
    out = set()
    for s in stmts:
        out |= (s.left | s.right | s.given)
    return frozenset(out - {Y, DATA})


def _one_step(s: CIStatement, levels: frozenset) -> Iterable[CIStatement]:
    # (a) split a joint (Y, D) statement
    if Y in s.left and DATA in s.left:
        yield CIStatement(s.left - {DATA}, s.right, s.given | {DATA})
        yield CIStatement(s.left - {Y}, s.right, s.given)
    # (b) a level independent of all other levels given the data
    if (len(s.left) == 1 and s.given == {DATA} and Y not in s.left and DATA not in s.left):
        (vi,) = s.left
        others = levels - {vi}
        if others and s.right == others:
            for vu in sorted(others):
                for extra in _subsets(others - {vu}):
                    yield CIStatement(s.left, frozenset([vu]), frozenset({DATA}) | extra)
    # (c) decomposition on the right-hand side
    if len(s.right) > 1:
        for sub in _nonempty_subsets(s.right):
            if sub != s.right:
                yield CIStatement(s.left, sub, s.given)


def derive_ci(base: Iterable[CIStatement], levels: Iterable[str] | None = None) -> frozenset:
    """Close ``base`` under the split, factoring and decomposition rules.

    Parameters
    ----------
    base : iterable of CIStatement
    levels : iterable of str, optional
        All hierarchy levels. Needed to recognise "independent of all other
        levels"; defaults to the levels mentioned in ``base``.
    """
    base = frozenset(base)
    levels = frozenset(levels) if levels is not None else _levels_in(base)
    closed = set(base)
    queue = deque(base)
    while queue:
        s = queue.popleft()
        for t in _one_step(s, levels):
            if t not in closed:
                closed.add(t)
                queue.append(t)
    return frozenset(closed)


def entails(closure: Iterable[CIStatement], stmt: CIStatement) -> bool:
    """Membership of ``stmt`` (or its mirror image) in a derived closure."""
    closure = closure if isinstance(closure, (set, frozenset)) else frozenset(closure)
    if stmt in closure:
        return True
    if Y not in stmt.left and DATA not in stmt.left:
        return stmt.swapped() in closure
    return False


# -- structural reduction -----------------------------------------------------

@dataclass(frozen=True)
class ZeroFact:
    term: TermId
    provenance: str = "asserted"
    rule: str = ""

    def __post_init__(self):
        if self.term.k < 1:
            raise ValueError("the leading term is never zero; facts need k >= 1")
        if self.provenance not in ("asserted", "derived"):
            raise ValueError(f"unknown provenance {self.provenance!r}")


def reduce_plan(plan: ExpansionPlan, cis: Iterable[CIStatement],
                levels: Iterable[str] | None = None) -> tuple[ExpansionPlan, list[ZeroFact]]:
    """Truncate ``plan`` after the first prefix that screens off the rest.

    Finds the smallest ``m >= 1`` such that the assumptions entail
    ``(Y, D)`` independent of blocks ``m+1..u`` given blocks ``1..m``. The
    dropped blocks become latent and their terms are reported as zero.
    """
    cis = list(cis)
    if not cis or plan.u <= 1:
        return plan, []
    levels = frozenset(levels) if levels is not None else (
        _levels_in(cis) | frozenset(plan.manifest) | frozenset(plan.latent)
    )
    closure = derive_ci(cis, levels)
    for m in range(1, plan.u):
        rest = frozenset(n for b in plan.blocks[m:] for n in b)
        prefix = frozenset(plan.prefix(m))
        if entails(closure, CIStatement(frozenset({Y, DATA}), rest, prefix)):
            reduced = ExpansionPlan(plan.blocks[:m], plan.latent + tuple(n for b in plan.blocks[m:] for n in b))
            facts = [ZeroFact(TermId(plan, k), "derived", "structural") for k in range(m + 1, plan.u + 1)]
            return reduced, facts
    return plan, []


# -- zero-term propagation across orderings -----------------------------------

def ordering_plan(order: Sequence[int], names: Sequence[str] | None = None) -> ExpansionPlan:
    """Single-variable-block plan visiting levels in ``order`` (1-based)."""
    K = len(order)
    names = tuple(names) if names is not None else tuple(f"V{i}" for i in range(1, K + 1))
    return ExpansionPlan(tuple((names[i - 1],) for i in order))


def _node_key(order: tuple, k: int):
    """(variable index, predecessor set) that determines T^order_k."""
    return order[k - 1], frozenset(order[: k - 1])


def node_label(order: tuple, k: int) -> str:
    return f"T[{''.join(map(str, order))}]_{k}"


@dataclass
class ImplicationGraph:
    """Nodes are ``(ordering, k)`` pairs; edges carry a kind and a regime.

    ``regime`` is the index ``i`` of the level assumed independent of all
    others given the data (one-sided edges only), or ``None``.
    """

    K: int
    nodes: set = field(default_factory=set)
    edges: set = field(default_factory=set)  # (src, dst, kind, regime)
    facts: dict = field(default_factory=dict)  # node -> ZeroFact

    def add_edge(self, src, dst, kind, regime=None):
        self.nodes.add(src)
        self.nodes.add(dst)
        self.edges.add((src, dst, kind, regime))

    def edges_of(self, kind: str, regime=None):
        return {(s, d) for s, d, k, r in self.edges if k == kind and (regime is None or r == regime)}

    def is_empty(self) -> bool:
        return not self.nodes and not self.edges

    def zero_terms(self) -> set:
        return set(self.facts)

    def to_json_obj(self) -> dict:
        return {
            "K": self.K,
            "nodes": sorted(node_label(*n) for n in self.nodes),
            "edges": sorted(
                [{"from": node_label(*s), "to": node_label(*d), "kind": k, "regime": r}
                 for s, d, k, r in self.edges],
                key=lambda e: (e["kind"], e["from"], e["to"]),
            ),
            "zero_terms": sorted(
                [{"term": node_label(*n), "provenance": f.provenance, "rule": f.rule}
                 for n, f in self.facts.items()],
                key=lambda e: e["term"],
            ),
        }

    def to_dot(self) -> str:
        styles = {None: "solid"}
        regimes = sorted({r for *_, r in self.edges if r is not None})
        for r, st in zip(regimes, ("solid", "dashed", "dotted")):
            styles[r] = st
        lines = ["digraph implications {", "  rankdir=LR;"]
        for n in sorted(self.nodes):
            shape = "box" if n in self.facts else "ellipse"
            lines.append(f'  "{node_label(*n)}" [shape={shape}];')
        done = set()
        for s, d, kind, r in sorted(self.edges, key=lambda e: (e[2], e[0], e[1], e[3] or 0)):
            if kind == TWO_SIDED:
                key = frozenset((s, d))
                if key in done:
                    continue
                done.add(key)
                lines.append(f'  "{node_label(*s)}" -> "{node_label(*d)}" [dir=both, style=bold];')
            else:
                lines.append(f'  "{node_label(*s)}" -> "{node_label(*d)}" [style={styles.get(r, "solid")}];')
        lines.append("}")
        return "\n".join(lines)


def _regimes(K: int, cis: Iterable[CIStatement], names: Sequence[str]) -> list[int]:
    """Levels ``i`` for which the assumptions entail V_i independent of the rest given D."""
    closure = derive_ci(cis, names)
    out = []
    for i in range(1, K + 1):
        vi = names[i - 1]
        rest = frozenset(names) - {vi}
        if not rest:
            continue
        if entails(closure, CIStatement(frozenset({vi}), rest, frozenset({DATA}))):
            out.append(i)
    return out


def implication_graph(K: int, cis: Iterable[CIStatement] = (), names: Sequence[str] | None = None) -> ImplicationGraph:
    """Every edge licensed for ``K`` levels under the given assumptions."""
    if K < 1:
        raise ValueError("K must be >= 1")
    names = tuple(names) if names is not None else tuple(f"V{i}" for i in range(1, K + 1))
    g = ImplicationGraph(K)
    by_key: dict = {}
    for order in itertools.permutations(range(1, K + 1)):
        for k in range(1, K + 1):
            node = (order, k)
            g.nodes.add(node)
            by_key.setdefault(_node_key(order, k), []).append(node)
    for group in by_key.values():
        for a, b in itertools.permutations(group, 2):
            g.add_edge(a, b, TWO_SIDED)
    for i in _regimes(K, cis, names):
        for (var, preds), srcs in by_key.items():
            if var != i:
                continue
            for drop in preds:
                for dst in by_key[(var, preds - {drop})]:
                    for src in srcs:
                        g.add_edge(src, dst, ONE_SIDED, i)
    return g


def _as_node(x, K):
    if isinstance(x, ZeroFact):
        x = x.term
    if isinstance(x, TermId):
        order = []
        for b in x.plan.blocks:
            if len(b) != 1:
                raise ValueError("zero facts must refer to single-variable-block plans")
            order.append(int(b[0].lstrip("V")))
        order, k = tuple(order), x.k
    else:
        order, k = tuple(x[0]), int(x[1])
    if sorted(order) != list(range(1, K + 1)):
        raise ValueError(f"ordering {order} is not a permutation of 1..{K}")
    if k < 1:
        raise ValueError("the leading term is never zero; facts need k >= 1")
    if k > K:
        raise ValueError(f"term index {k} exceeds K={K}")
    return order, k


def propagate_zero_terms(facts: Iterable, cis: Iterable[CIStatement], K: int) -> ImplicationGraph:
    """Spread asserted zero terms to every term they imply.

    ``facts`` may hold :class:`ZeroFact`, :class:`TermId` or ``(ordering, k)``
    pairs. The result holds only the asserted and derived nodes and the edges
    actually used to reach them; with no facts it is empty.
    """
    full = implication_graph(K, cis)
    out = ImplicationGraph(K)
    adj: dict = {}
    for s, d, kind, r in full.edges:
        adj.setdefault(s, []).append((d, kind, r))
    queue = deque()
    for f in facts:
        node = _as_node(f, K)
        if node not in out.facts:
            out.facts[node] = ZeroFact(TermId(ordering_plan(node[0]), node[1]), "asserted", "given")
            out.nodes.add(node)
            queue.append(node)
    while queue:
        n = queue.popleft()
        for d, kind, r in sorted(adj.get(n, ()), key=lambda e: (e[0], e[1], e[2] or 0)):
            out.add_edge(n, d, kind, r)
            if d not in out.facts:
                rule = "same_predecessors" if kind == TWO_SIDED else f"independent_level_V{r}"
                out.facts[d] = ZeroFact(TermId(ordering_plan(d[0]), d[1]), "derived", rule)
                queue.append(d)
    return out


def parse_term(text: str) -> tuple[tuple[int, ...], int]:
    """Parse ``"123:3"`` into ``((1, 2, 3), 3)``."""
    try:
        order, k = text.split(":")
        return tuple(int(c) for c in order.strip()), int(k)
    except ValueError:
        raise ValueError(f"cannot parse term {text!r}; expected e.g. '123:3'") from None


def load_ci_json(doc) -> list[CIStatement]:
    obj = json.loads(doc) if isinstance(doc, str) else doc
    if isinstance(obj, dict):
        obj = obj.get("ci", obj.get("statements", []))
    return [CIStatement.from_json_obj(o) for o in obj]
