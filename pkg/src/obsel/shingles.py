"""Operator skeletons, depth/structure shingles and pool-wide weight tables.

Identifiers and literals carry no structural information, so they are erased
before shingling.  A formula is then characterised by two multisets of
fixed-length label windows: windows along root-to-leaf paths ("depth") and
windows over [parent, child1, ..., childm] sequences ("structure").
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Literal, Optional

from obsel import _kernels
from obsel.formula import Formula, Kind, formula_hash

DEFAULT_N = 3
MIN_N, MAX_N = 2, 5
DEFAULT_TAU = 1000
DEFAULT_K = 64

ERASED_KINDS = frozenset({Kind.IDENT, Kind.INT_LIT, Kind.NAT, Kind.INT, Kind.META_VAR})

ShingleKind = Literal["depth", "structure"]

_BITS = _kernels.LABEL_BITS
_LABEL_MASK = (1 << _BITS) - 1


class EmptySkeleton(ValueError):
    """The formula has no operator structure once identifiers and literals are erased."""


@dataclass(frozen=True, order=True)
class Shingle:
    kind: ShingleKind
    labels: tuple[str, ...]

    def __str__(self) -> str:
        return "[" + ", ".join(self.labels) + "]"


def encode(labels: Iterable[Kind]) -> int:
    code = 0
    for k in labels:
        code = (code << _BITS) | int(k)
    return code


def decode(code: int) -> tuple[Kind, ...]:
    out = []
    while code:
        out.append(Kind(code & _LABEL_MASK))
        code >>= _BITS
    return tuple(reversed(out))


def code_to_shingle(kind: ShingleKind, code: int) -> Shingle:
    return Shingle(kind, tuple(k.symbol for k in decode(code)))


def shingle_to_code(s: Shingle) -> int:
    by_symbol = {k.symbol: k for k in Kind}
    return encode(by_symbol[label] for label in s.labels)


# ---------------------------------------------------------------------------
# Skeletons
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Skeleton:
    kind: Kind
    children: tuple["Skeleton", ...] = ()

    @property
    def label(self) -> str:
        return self.kind.symbol

    def __str__(self) -> str:
        if not self.children:
            return self.label
        parts = [c.label if not c.children else f"({c})" for c in self.children]
        return self.label + " " + " ".join(parts)

    def size(self) -> int:
        return 1 + sum(c.size() for c in self.children)


def _strip(f: Formula) -> Optional[Skeleton]:
    if f.kind in ERASED_KINDS:
        return None
    kids = tuple(s for s in (_strip(c) for c in f.children) if s is not None)
    return Skeleton(f.kind, kids)


def skeleton(f: Formula) -> Skeleton:
    """Operator tree of ``f`` with identifier/literal leaves removed.

    Raises EmptySkeleton for a bare identifier or literal.
    """
    s = _strip(f)
    if s is None:
        raise EmptySkeleton(f"{f.kind.name} has no operator structure")
    return s


def _check_n(n: int) -> None:
    if not MIN_N <= n <= MAX_N:
        raise ValueError(f"shingle size must be in {MIN_N}..{MAX_N}, got {n}")


def depth_shingles(skel: Skeleton, n: int = DEFAULT_N) -> Counter[Shingle]:
    """Windows of length n along root-to-leaf paths, one per window-ending node."""
    _check_n(n)
    out: Counter[Shingle] = Counter()

    def walk(node: Skeleton, path: tuple[str, ...]) -> None:
        path = (path + (node.label,))[-n:]
        if len(path) == n:
            out[Shingle("depth", path)] += 1
        for c in node.children:
            walk(c, path)

    walk(skel, ())
    return out


def structure_shingles(skel: Skeleton, n: int = DEFAULT_N) -> Counter[Shingle]:
    _check_n(n)
    out: Counter[Shingle] = Counter()

    def walk(node: Skeleton) -> None:
        if node.children:
            seq = (node.label,) + tuple(c.label for c in node.children)
            for i in range(len(seq) - n + 1):
                out[Shingle("structure", seq[i : i + n])] += 1
            for c in node.children:
                walk(c)

    walk(skel)
    return out


# ---------------------------------------------------------------------------
# Profiles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ShingleProfile:
    """Depth and structure shingle multisets of one formula.

    Shingles are held as integer window codes (see ``encode``); the
    ``depth``/``structure`` properties decode them to ``Shingle`` values.
    """

    n: int
    depth_codes: dict[int, int]
    structure_codes: dict[int, int]
    source_hash: int = 0

    @property
    def depth(self) -> Counter[Shingle]:
        return Counter({code_to_shingle("depth", c): k for c, k in self.depth_codes.items()})

    @property
    def structure(self) -> Counter[Shingle]:
        return Counter({code_to_shingle("structure", c): k for c, k in self.structure_codes.items()})

    def is_empty(self) -> bool:
        return not self.depth_codes and not self.structure_codes

    def to_json(self) -> dict:
        def rows(counts: Counter[Shingle]) -> list[dict]:
            return [{"labels": list(s.labels), "count": k} for s, k in sorted(counts.items())]

        return {"depth": rows(self.depth), "structure": rows(self.structure)}


def profile(f: Formula, n: int = DEFAULT_N) -> ShingleProfile:
    """Shingle profile of ``f``; linear in the node count for fixed ``n``.

    A formula without operator structure yields an empty profile.
    """
    _check_n(n)
    depth, structure = _kernels.extract(f, n)
    return ShingleProfile(n, depth, structure, formula_hash(f))


# ---------------------------------------------------------------------------
# Weight tables
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WeightTable:
    """Pool-wide occurrence counts; weight = 1/count, or 0 above ``tau``."""

    depth_counts: dict[int, int] = field(default_factory=dict)
    structure_counts: dict[int, int] = field(default_factory=dict)
    pool_size: int = 0
    tau: float = DEFAULT_TAU

    def _counts(self, kind: ShingleKind) -> dict[int, int]:
        return self.depth_counts if kind == "depth" else self.structure_counts

    def count(self, kind: ShingleKind, code: int) -> int:
        return self._counts(kind).get(code, 0)

    def weight(self, kind: ShingleKind, code: int) -> float:
        cnt = self._counts(kind).get(code, 0)
        if cnt == 0 or cnt > self.tau:
            return 0.0
        return 1.0 / cnt

    def weight_of(self, s: Shingle) -> float:
        return self.weight(s.kind, shingle_to_code(s))

    @property
    def counts(self) -> dict[Shingle, int]:
        out = {code_to_shingle("depth", c): k for c, k in self.depth_counts.items()}
        out.update({code_to_shingle("structure", c): k for c, k in self.structure_counts.items()})
        return out

    def merge(self, other: "WeightTable") -> "WeightTable":
        """Combine tables built over disjoint sub-pools (associative, commutative)."""
        if self.tau != other.tau:
            raise ValueError("cannot merge weight tables with different thresholds")
        d = Counter(self.depth_counts)
        d.update(other.depth_counts)
        s = Counter(self.structure_counts)
        s.update(other.structure_counts)
        return WeightTable(dict(d), dict(s), self.pool_size + other.pool_size, self.tau)


def build_weight_table(pool: Iterable[ShingleProfile], tau: float = DEFAULT_TAU) -> WeightTable:
    d: Counter[int] = Counter()
    s: Counter[int] = Counter()
    size = 0
    for p in pool:
        d.update(p.depth_codes)
        s.update(p.structure_codes)
        size += 1
    return WeightTable(dict(d), dict(s), size, tau)


def top_weighted(codes: Iterable[int], table: WeightTable, kind: ShingleKind, k: float) -> set[int]:
    """At most k distinct codes with the highest nonzero weight (ties: smaller code)."""
    weighted = [(table.weight(kind, c), c) for c in codes]
    weighted = [(w, c) for w, c in weighted if w > 0.0]
    if math.isinf(k) or len(weighted) <= k:
        return {c for _, c in weighted}
    weighted.sort(key=lambda wc: (-wc[0], wc[1]))
    return {c for _, c in weighted[: int(k)]}
