"""Hypothesis generators for well-formed formulas."""

from __future__ import annotations

from functools import lru_cache

from hypothesis import strategies as st

from obsel.formula import Formula, Kind

NAMES = ["a", "b", "c", "d", "x", "y", "z", "f", "S", "T", "BOOKS", "library", "n_2", "x1"]

BINARY_EXPR = [
    Kind.ADD, Kind.SUB, Kind.MUL, Kind.DIV, Kind.MOD,
    Kind.UNION, Kind.INTER, Kind.SET_MINUS, Kind.CART_PROD,
    Kind.OVERRIDE, Kind.TOTAL_FUN, Kind.PARTIAL_FUN, Kind.RELATION,
    Kind.MAPLET, Kind.IMAGE, Kind.FUN_APP,
]
UNARY_EXPR = [Kind.POW, Kind.DOM, Kind.RAN]
COMPARISON = [Kind.EQUAL, Kind.NOT_EQUAL, Kind.IN, Kind.SUBSET_EQ, Kind.LT, Kind.LE, Kind.GT, Kind.GE]
CONNECTIVE = [Kind.AND, Kind.OR, Kind.IMPLIES, Kind.IFF]

idents = st.sampled_from(NAMES).map(Formula.ident)
literals = st.integers(-20, 120).map(Formula.lit)
number_sets = st.sampled_from([Kind.NAT, Kind.INT]).map(Formula.op)


def _op(kind: Kind, *children: Formula) -> Formula:
    return Formula.op(kind, *children)


@lru_cache(maxsize=None)
def expressions(depth: int) -> st.SearchStrategy[Formula]:
    leaf = st.one_of(idents, literals, number_sets)
    if depth <= 1:
        return leaf
    sub = expressions(depth - 1)
    return st.one_of(
        leaf,
        st.builds(_op, st.sampled_from(BINARY_EXPR), sub, sub),
        st.builds(_op, st.sampled_from(UNARY_EXPR), sub),
        st.lists(sub, min_size=1, max_size=3).map(lambda cs: Formula.op(Kind.SET_EXTENSION, *cs)),
    )


@lru_cache(maxsize=None)
def predicates(depth: int) -> st.SearchStrategy[Formula]:
    consts = st.sampled_from([Kind.TRUE, Kind.FALSE]).map(Formula.op)
    if depth <= 1:
        return consts
    sub = predicates(depth - 1)
    operand = expressions(depth - 1)
    bound = st.lists(st.sampled_from(NAMES[:8]), min_size=1, max_size=3, unique=True)
    return st.one_of(
        consts,
        st.builds(_op, st.sampled_from(COMPARISON), operand, operand),
        st.builds(_op, st.sampled_from(CONNECTIVE), sub, sub),
        sub.map(lambda p: Formula.op(Kind.NOT, p)),
        st.builds(Formula.quant, st.sampled_from([Kind.FORALL, Kind.EXISTS]), bound, sub),
    )


def formulas(max_depth: int = 8) -> st.SearchStrategy[Formula]:
    return st.one_of(predicates(max_depth), expressions(max_depth))


def depth(f: Formula) -> int:
    return 1 + max((depth(c) for c in f.children), default=0)


def relabel_leaves(f: Formula, rename, relit) -> Formula:
    """Rename every identifier (bound lists included) and remap every literal."""
    if f.kind is Kind.IDENT:
        return Formula.ident(rename(f.value))
    if f.kind is Kind.INT_LIT:
        return Formula.lit(relit(f.value))
    children = tuple(relabel_leaves(c, rename, relit) for c in f.children)
    bound = tuple(dict.fromkeys(rename(b) for b in f.bound))
    return Formula(f.kind, children, f.value, bound)


# --- seeded generators (fixed corpora for the acceptance run) -----------


def random_expression(rng, depth: int) -> Formula:
    r = rng.random()
    if depth <= 1 or r < 0.2:
        leaf = rng.randrange(3)
        if leaf == 0:
            return Formula.ident(rng.choice(NAMES))
        if leaf == 1:
            return Formula.lit(rng.randint(-20, 120))
        return Formula.op(rng.choice([Kind.NAT, Kind.INT]))
    if r < 0.7:
        return _op(rng.choice(BINARY_EXPR), random_expression(rng, depth - 1), random_expression(rng, depth - 1))
    if r < 0.85:
        return _op(rng.choice(UNARY_EXPR), random_expression(rng, depth - 1))
    return Formula.op(Kind.SET_EXTENSION, *(random_expression(rng, depth - 1) for _ in range(rng.randint(1, 3))))


def random_predicate(rng, depth: int) -> Formula:
    r = rng.random()
    if depth <= 1 or r < 0.05:
        return Formula.op(rng.choice([Kind.TRUE, Kind.FALSE]))
    if r < 0.45:
        return _op(rng.choice(COMPARISON), random_expression(rng, depth - 1), random_expression(rng, depth - 1))
    if r < 0.75:
        return _op(rng.choice(CONNECTIVE), random_predicate(rng, depth - 1), random_predicate(rng, depth - 1))
    if r < 0.85:
        return Formula.op(Kind.NOT, random_predicate(rng, depth - 1))
    bound = rng.sample(NAMES[:8], rng.randint(1, 3))
    return Formula.quant(rng.choice([Kind.FORALL, Kind.EXISTS]), bound, random_predicate(rng, depth - 1))


def random_formula(rng, max_depth: int = 8) -> Formula:
    d = rng.randint(1, max_depth)
    return random_predicate(rng, d) if rng.random() < 0.6 else random_expression(rng, d)
