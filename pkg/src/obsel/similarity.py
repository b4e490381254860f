"""Formula similarity scoring and hypothesis/lemma selection."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import AbstractSet, Literal, Sequence

from obsel.formula import Formula, free_identifiers
from obsel.shingles import (
    DEFAULT_K,
    DEFAULT_N,
    DEFAULT_TAU,
    ShingleKind,
    ShingleProfile,
    WeightTable,
    build_weight_table,
    profile,
    top_weighted,
)


class UndefinedSimilarity(ValueError):
    """Jaccard similarity of two empty sets."""


@dataclass(frozen=True)
class ScoreParams:
    c: float = 1.0
    n: int = DEFAULT_N
    tau: float = DEFAULT_TAU
    k: float = DEFAULT_K
    theta: float = 0.0
    top: int = 50
    depth: int = 1

    def __post_init__(self) -> None:
        if self.c < 0:
            raise ValueError("c must be nonnegative")
        if self.n < 2:
            raise ValueError("shingle size must be at least 2")
        if self.top < 0 or self.depth < 0:
            raise ValueError("top and depth must be nonnegative")

    @classmethod
    def unpruned(cls, **kw) -> "ScoreParams":
        return cls(tau=math.inf, k=math.inf, **kw)

    def to_json(self) -> dict:
        def num(x: float):
            return None if math.isinf(x) else x

        return {
            "c": self.c,
            "n": self.n,
            "tau": num(self.tau),
            "k": num(self.k),
            "theta": self.theta,
            "top": self.top,
            "depth": self.depth,
        }


Via = Literal["FreeIdent", "Structural"]
Source = Literal["hyp", "lemma"]


@dataclass(frozen=True)
class RankedCandidate:
    index: int
    source: Source
    score: float
    via: Via

    def to_json(self) -> dict:
        return {"index": self.index, "source": self.source, "score": self.score, "via": self.via}


def jaccard(p: AbstractSet, q: AbstractSet) -> Fraction:
    if not p and not q:
        raise UndefinedSimilarity("both sets are empty")
    return Fraction(len(p & q), len(p | q))


def _exact_weight_sum(codes: AbstractSet[int], table: WeightTable, kind: ShingleKind) -> Fraction:
    by_count = Counter(table.count(kind, c) for c in codes)
    return sum((Fraction(m, cnt) for cnt, m in by_count.items()), Fraction(0))


def weighted_score(p: ShingleProfile, q: ShingleProfile, table: WeightTable, params: ScoreParams) -> float:
    """Weighted shingle overlap: sum of depth weights plus c times structure weights.

    The sum is taken over exact rationals and rounded once, so equal scores
    compare equal regardless of how they decompose, and the result is
    symmetric in ``p`` and ``q``.
    """
    k = params.k
    d1 = top_weighted(p.depth_codes, table, "depth", k)
    d2 = top_weighted(q.depth_codes, table, "depth", k)
    s1 = top_weighted(p.structure_codes, table, "structure", k)
    s2 = top_weighted(q.structure_codes, table, "structure", k)
    depth_sum = _exact_weight_sum(d1 & d2, table, "depth")
    struct_sum = _exact_weight_sum(s1 & s2, table, "structure")
    return float(depth_sum + Fraction(params.c) * struct_sum)


def free_ident_closure(goal: Formula, hypotheses: Sequence[Formula], depth: int) -> set[int]:
    """Hypotheses reachable from the goal through shared free identifiers in ``depth`` rounds."""
    known = free_identifiers(goal)
    hyp_ids = [free_identifiers(h) for h in hypotheses]
    selected: set[int] = set()
    for _ in range(depth):
        new = {i for i, ids in enumerate(hyp_ids) if i not in selected and ids & known}
        if not new:
            break
        selected |= new
        for i in new:
            known |= hyp_ids[i]
    return selected


def select(
    goal: Formula,
    hypotheses: Sequence[Formula],
    lemma_bodies: Sequence[Formula],
    params: ScoreParams = ScoreParams(),
) -> list[RankedCandidate]:
    """Union of free-identifier closure over hypotheses and top-N structural matches.

    The weight table is built over hypotheses and lemma bodies (the goal is
    not part of the pool).  Output is sorted by score descending, then by
    position (hypotheses first, then lemmas).
    """
    candidates: list[tuple[Source, int, Formula]] = [("hyp", i, h) for i, h in enumerate(hypotheses)]
    candidates += [("lemma", i, b) for i, b in enumerate(lemma_bodies)]
    profiles = [profile(f, params.n) for _, _, f in candidates]
    table = build_weight_table(profiles, params.tau)
    goal_profile = profile(goal, params.n)
    scores = [weighted_score(goal_profile, q, table, params) for q in profiles]

    order = sorted(range(len(candidates)), key=lambda j: (-scores[j], j))
    structural = [j for j in order if scores[j] >= params.theta][: params.top]
    closure = free_ident_closure(goal, hypotheses, params.depth)

    chosen: dict[int, Via] = {j: "FreeIdent" for j in closure}
    for j in structural:
        chosen.setdefault(j, "Structural")
    return [
        RankedCandidate(candidates[j][1], candidates[j][0], scores[j], chosen[j])
        for j in sorted(chosen, key=lambda j: (-scores[j], j))
    ]
