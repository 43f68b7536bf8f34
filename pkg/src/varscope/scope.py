"""Counting and listing the expansions that condition only inside EVar terms.

An expansion picks a non-empty manifest subset of ``K`` variables and splits
it into an ordered sequence of ``u`` non-empty blocks. For fixed ``(K, M, u)``
there are ``u! * C(K, M) * S(M, u)`` of them, with ``S`` the Stirling number
of the second kind.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator, Sequence

from .model import DomainError, ExpansionPlan

__all__ = [
    "ScopeQuery",
    "stirling2",
    "count_expansions",
    "enumerate_plans",
    "MAX_K",
    "brute_force_count",
]

MAX_K = 12


@dataclass(frozen=True)
class ScopeQuery:
    K: int
    M: int | None = None
    u: int | None = None

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 1:
            raise DomainError(f"K must be an integer >= 1, got {self.K}")
        if self.M is not None and not 0 <= self.M <= self.K:
            raise DomainError(f"need M <= K, got M={self.M}, K={self.K}")
        if self.u is not None and self.M is not None and self.u > self.M:
            raise DomainError(f"need u <= M, got u={self.u}, M={self.M}")
        if self.u is not None and self.u < 0:
            raise DomainError(f"u must be >= 0, got {self.u}")


@lru_cache(maxsize=None)
def stirling2(M: int, u: int) -> int:
    """Stirling number of the second kind; 0 outside the valid range."""
    if M < 0 or u < 0:
        return 0
    if M == 0 and u == 0:
        return 1
    if M == 0 or u == 0 or u > M:
        return 0
    # iterate rows to avoid deep recursion for large M
    row = [1]  # S(0, .)
    for m in range(1, M + 1):
        new = [0] * (min(m, u) + 1)
        for k in range(1, len(new)):
            prev_k = row[k] if k < len(row) else 0
            new[k] = k * prev_k + row[k - 1]
        row = new
    return row[u] if u < len(row) else 0


def count_expansions(q: ScopeQuery | int, M: int | None = None, u: int | None = None) -> int:
    """Number of ``(u+1)``-term expansions.

    With ``M`` and ``u`` set, ``u! C(K, M) S(M, u)``. With only ``M``, the sum
    over ``u``. With only ``K``, the sum over all ``1 <= u <= M <= K``.
    """
    if not isinstance(q, ScopeQuery):
        q = ScopeQuery(int(q), M, u)
    K = q.K
    if q.M is not None and q.u is not None:
        return math.factorial(q.u) * math.comb(K, q.M) * stirling2(q.M, q.u)
    if q.M is not None:
        return sum(math.factorial(v) * math.comb(K, q.M) * stirling2(q.M, v) for v in range(1, q.M + 1))
    if q.u is not None:
        return sum(math.factorial(q.u) * math.comb(K, m) * stirling2(m, q.u) for m in range(q.u, K + 1))
    return sum(
        math.factorial(v) * math.comb(K, m) * stirling2(m, v)
        for v in range(1, K + 1)
        for m in range(v, K + 1)
    )


def _set_partitions(items: tuple, u: int) -> Iterator[list[tuple]]:
    """Unordered partitions of ``items`` into ``u`` blocks, in restricted-growth order."""
    n = len(items)
    if u < 1 or u > n:
        return
    labels = [0] * n

    def rec(i, used):
        if n - i < u - used:
            return
        if i == n:
            if used == u:
                blocks = [[] for _ in range(u)]
                for item, lab in zip(items, labels):
                    blocks[lab].append(item)
                yield [tuple(b) for b in blocks]
            return
        for lab in range(min(used + 1, u)):
            labels[i] = lab
            yield from rec(i + 1, max(used, lab + 1))

    yield from rec(0, 0)


def enumerate_plans(K: int, manifest_filter: Sequence[int] | None = None, *, M: int | None = None,
                    u: int | None = None, names: Sequence[str] | None = None,
                    allow_large: bool = False) -> Iterator[ExpansionPlan]:
    """Yield every expansion plan over variables ``V1..VK``.

    Order: by manifest size ``M``, then block count ``u``, then the blocks
    as a lexicographically sorted sequence of sorted index tuples.

    Parameters
    ----------
    K : int
    manifest_filter : sequence of int, optional
        Only yield plans whose manifest set is exactly this set of indices.
    M, u : int, optional
        Restrict to one manifest size or block count.
    names : sequence of str, optional
        Variable names; defaults to ``V1..VK``.
    allow_large : bool
        Permit ``K > 12``.
    """
    if int(K) != K or K < 1:
        raise DomainError(f"K must be an integer >= 1, got {K}")
    if K > MAX_K and not allow_large:
        raise DomainError(f"K={K} exceeds {MAX_K}; pass allow_large=True to enumerate anyway")
    names = tuple(names) if names is not None else tuple(f"V{i}" for i in range(1, K + 1))
    if len(names) != K:
        raise ValueError("names must have length K")
    universe = tuple(range(1, K + 1))
    wanted = None if manifest_filter is None else tuple(sorted(set(int(i) for i in manifest_filter)))
    if wanted is not None and any(i not in universe for i in wanted):
        raise DomainError(f"manifest_filter {wanted} outside 1..{K}")
    m_range = range(1, K + 1) if M is None else [M]
    for m in m_range:
        subsets = list(itertools.combinations(universe, m)) if wanted is None else (
            [wanted] if len(wanted) == m else []
        )
        u_range = range(1, m + 1) if u is None else ([u] if 1 <= u <= m else [])
        for v in u_range:
            plans = []
            for sub in subsets:
                for part in _set_partitions(sub, v):
                    for perm in itertools.permutations(part):
                        plans.append(perm)
            plans.sort()
            for blocks in plans:
                used = {i for b in blocks for i in b}
                yield ExpansionPlan(
                    tuple(tuple(names[i - 1] for i in b) for b in blocks),
                    tuple(names[i - 1] for i in universe if i not in used),
                )


def brute_force_count(K: int) -> int:
    """Count plans by labelling each variable with a block number or 'latent'.

    Every assignment of labels ``0..u`` (0 = latent) that uses each block
    label ``1..u`` at least once is one ordered plan. Independent of the
    Stirling formula and of :func:`enumerate_plans`.
    """
    total = 0
    for v in range(1, K + 1):
        for labels in itertools.product(range(v + 1), repeat=K):
            if all(b in labels for b in range(1, v + 1)):
                total += 1
    return total
