"""Formula AST for a small subset of the Event-B mathematical language.

Concrete syntax is the Rodin ASCII keyboard notation.  Formulas are immutable;
equality and hashing are structural and ignore source spans.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Optional, Union

from obsel import _kernels


class Kind(enum.IntEnum):
    # predicates
    TRUE = 1
    FALSE = 2
    NOT = 3
    AND = 4
    OR = 5
    IMPLIES = 6
    IFF = 7
    FORALL = 8
    EXISTS = 9
    EQUAL = 10
    NOT_EQUAL = 11
    IN = 12
    SUBSET_EQ = 13
    LT = 14
    LE = 15
    GT = 16
    GE = 17
    # expressions
    IDENT = 20
    INT_LIT = 21
    ADD = 22
    SUB = 23
    MUL = 24
    DIV = 25
    MOD = 26
    UNION = 27
    INTER = 28
    SET_MINUS = 29
    CART_PROD = 30
    POW = 31
    MAPLET = 32
    SET_EXTENSION = 33
    DOM = 34
    RAN = 35
    IMAGE = 36
    OVERRIDE = 37
    TOTAL_FUN = 38
    PARTIAL_FUN = 39
    RELATION = 40
    FUN_APP = 41
    NAT = 42
    INT = 43
    META_VAR = 44

    @property
    def is_predicate(self) -> bool:
        return self < 20

    @property
    def symbol(self) -> str:
        return SYMBOLS[self]


SYMBOLS: dict[Kind, str] = {
    Kind.TRUE: "true",
    Kind.FALSE: "false",
    Kind.NOT: "not",
    Kind.AND: "&",
    Kind.OR: "or",
    Kind.IMPLIES: "=>",
    Kind.IFF: "<=>",
    Kind.FORALL: "!",
    Kind.EXISTS: "#",
    Kind.EQUAL: "=",
    Kind.NOT_EQUAL: "/=",
    Kind.IN: ":",
    Kind.SUBSET_EQ: "<:",
    Kind.LT: "<",
    Kind.LE: "<=",
    Kind.GT: ">",
    Kind.GE: ">=",
    Kind.IDENT: "id",
    Kind.INT_LIT: "lit",
    Kind.ADD: "+",
    Kind.SUB: "-",
    Kind.MUL: "*",
    Kind.DIV: "/",
    Kind.MOD: "mod",
    Kind.UNION: "\\/",
    Kind.INTER: "/\\",
    Kind.SET_MINUS: "\\",
    Kind.CART_PROD: "**",
    Kind.POW: "POW",
    Kind.MAPLET: "|->",
    Kind.SET_EXTENSION: "{}",
    Kind.DOM: "dom",
    Kind.RAN: "ran",
    Kind.IMAGE: "[]",
    Kind.OVERRIDE: "<+",
    Kind.TOTAL_FUN: "-->",
    Kind.PARTIAL_FUN: "+->",
    Kind.RELATION: "<->",
    Kind.FUN_APP: "()",
    Kind.NAT: "NAT",
    Kind.INT: "INT",
    Kind.META_VAR: "?",
}

LEAF_KINDS = frozenset({Kind.TRUE, Kind.FALSE, Kind.IDENT, Kind.INT_LIT, Kind.NAT, Kind.INT, Kind.META_VAR})
QUANTIFIERS = frozenset({Kind.FORALL, Kind.EXISTS})
CONNECTIVES = frozenset({Kind.AND, Kind.OR, Kind.IMPLIES, Kind.IFF})
COMPARISONS = frozenset(
    {Kind.EQUAL, Kind.NOT_EQUAL, Kind.IN, Kind.SUBSET_EQ, Kind.LT, Kind.LE, Kind.GT, Kind.GE}
)
SET_OPS = frozenset(
    {
        Kind.UNION,
        Kind.INTER,
        Kind.SET_MINUS,
        Kind.CART_PROD,
        Kind.OVERRIDE,
        Kind.TOTAL_FUN,
        Kind.PARTIAL_FUN,
        Kind.RELATION,
    }
)
ADDITIVE = frozenset({Kind.ADD, Kind.SUB})
MULTIPLICATIVE = frozenset({Kind.MUL, Kind.DIV, Kind.MOD})
PREFIX_CALLS = frozenset({Kind.POW, Kind.DOM, Kind.RAN})
POSTFIX = frozenset({Kind.FUN_APP, Kind.IMAGE})


def _arity(kind: Kind) -> Optional[int]:
    if kind in LEAF_KINDS:
        return 0
    if kind is Kind.NOT or kind in QUANTIFIERS or kind in PREFIX_CALLS:
        return 1
    if kind is Kind.SET_EXTENSION:
        return None
    return 2


class FormulaError(Exception):
    """Base class for errors raised by the formula layer."""


class ParseError(FormulaError):
    def __init__(self, message: str, span: "SourceSpan", expected: frozenset[str] = frozenset()):
        self.message = message
        self.span = span
        self.expected = expected
        detail = f" (expected one of: {', '.join(sorted(expected))})" if expected else ""
        super().__init__(f"{message} at {span.start}..{span.end}{detail}")


class CaptureError(FormulaError):
    def __init__(self, binder: str, identifier: str):
        self.binder = binder
        self.identifier = identifier
        super().__init__(f"replacing {identifier!r} would be captured by binder {binder!r}")


@dataclass(frozen=True)
class SourceSpan:
    start: int = 0
    end: int = 0

    def __post_init__(self) -> None:
        if self.start > self.end:
            raise ValueError(f"invalid span {self.start}..{self.end}")


NO_SPAN = SourceSpan()
Payload = Union[str, int, None]


@dataclass(frozen=True, slots=True)
class Formula:
    kind: Kind
    children: tuple["Formula", ...] = ()
    value: Payload = None
    bound: tuple[str, ...] = ()
    span: SourceSpan = field(default=NO_SPAN, compare=False, repr=False)

    def __post_init__(self) -> None:
        kind = self.kind
        arity = _arity(kind)
        n = len(self.children)
        if arity is None:
            if n < 1:
                raise ValueError("set extension needs at least one element")
        elif n != arity:
            raise ValueError(f"{kind.name} takes {arity} children, got {n}")
        if kind in QUANTIFIERS:
            if not self.bound:
                raise ValueError("quantifier needs a nonempty bound list")
            if len(set(self.bound)) != len(self.bound):
                raise ValueError("duplicate bound variable")
        elif self.bound:
            raise ValueError(f"{kind.name} carries no bound list")
        if kind in (Kind.IDENT, Kind.META_VAR):
            if not isinstance(self.value, str) or not self.value:
                raise ValueError(f"{kind.name} needs a name")
        elif kind is Kind.INT_LIT:
            if not isinstance(self.value, int) or isinstance(self.value, bool):
                raise ValueError("integer literal needs an int value")
        elif self.value is not None:
            raise ValueError(f"{kind.name} carries no payload")
        # stratification
        if kind.is_predicate:
            wants_pred = kind not in COMPARISONS
        else:
            wants_pred = False
        for c in self.children:
            if c.kind.is_predicate != wants_pred:
                raise ValueError(
                    f"{kind.name} expects {'predicate' if wants_pred else 'expression'} operands"
                )

    # --- constructors ---------------------------------------------------

    @classmethod
    def ident(cls, name: str) -> "Formula":
        return cls(Kind.IDENT, value=name)

    @classmethod
    def lit(cls, value: int) -> "Formula":
        return cls(Kind.INT_LIT, value=value)

    @classmethod
    def meta(cls, name: str) -> "Formula":
        return cls(Kind.META_VAR, value=name)

    @classmethod
    def op(cls, kind: Kind, *children: "Formula") -> "Formula":
        return cls(kind, tuple(children))

    @classmethod
    def quant(cls, kind: Kind, names: tuple[str, ...] | list[str], body: "Formula") -> "Formula":
        return cls(kind, (body,), bound=tuple(names))

    @property
    def is_predicate(self) -> bool:
        return self.kind.is_predicate

    def __str__(self) -> str:
        return print_formula(self, debug=True)

    def subterms(self) -> Iterator["Formula"]:
        """Pre-order, left-to-right walk over every node."""
        stack = [self]
        while stack:
            f = stack.pop()
            yield f
            stack.extend(reversed(f.children))

    def size(self) -> int:
        return sum(1 for _ in self.subterms())

    def contains_meta(self) -> bool:
        return any(f.kind is Kind.META_VAR for f in self.subterms())


# ---------------------------------------------------------------------------
# Lexer
# ---------------------------------------------------------------------------

_OPERATORS = sorted(
    [
        "<=>", "=>", "<+", "<->", "<:", "<=", "<", "-->", "+->", "|->", "/=", "/\\", "\\/",
        "\\", "**", "*", "/", "+", "-", "=", ":", ">=", ">", "(", ")", "[", "]", "{", "}",
        ",", ".", "!", "#", "&",
    ],
    key=len,
    reverse=True,
)
KEYWORDS = frozenset({"or", "not", "mod", "POW", "NAT", "INT", "dom", "ran", "true", "false"})

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_']*")
_INT_RE = re.compile(r"[0-9]+")
_WS_RE = re.compile(r"\s+")


@dataclass(frozen=True)
class Token:
    kind: str  # "op", "kw", "ident", "meta", "int", "eof"
    text: str
    span: SourceSpan


def tokenize(text: str, *, allow_meta: bool = False, allow_primes: bool = False) -> list[Token]:
    if text.isascii():
        byte_at = None
    else:
        byte_at = [0]
        for ch in text:
            byte_at.append(byte_at[-1] + len(ch.encode("utf-8")))

    def span(a: int, b: int) -> SourceSpan:
        if byte_at is None:
            return SourceSpan(a, b)
        return SourceSpan(byte_at[a], byte_at[b])

    tokens: list[Token] = []
    i, n = 0, len(text)
    while i < n:
        m = _WS_RE.match(text, i)
        if m:
            i = m.end()
            continue
        ch = text[i]
        if ch == "?" and allow_meta:
            m = _IDENT_RE.match(text, i + 1)
            if not m or "'" in m.group():
                raise ParseError("malformed metavariable", span(i, i + 1), frozenset({"identifier"}))
            tokens.append(Token("meta", m.group(), span(i, m.end())))
            i = m.end()
            continue
        m = _IDENT_RE.match(text, i)
        if m:
            word = m.group()
            if "'" in word and not allow_primes:
                raise ParseError(f"primed identifier {word!r} not allowed here", span(i, m.end()))
            tokens.append(Token("kw" if word in KEYWORDS else "ident", word, span(i, m.end())))
            i = m.end()
            continue
        m = _INT_RE.match(text, i)
        if m:
            tokens.append(Token("int", m.group(), span(i, m.end())))
            i = m.end()
            continue
        for op in _OPERATORS:
            if text.startswith(op, i):
                tokens.append(Token("op", op, span(i, i + len(op))))
                i += len(op)
                break
        else:
            raise ParseError(f"unexpected character {ch!r}", span(i, i + 1))
    tokens.append(Token("eof", "", span(n, n)))
    return tokens


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

_COMPARISON_TOKENS = {
    "=": Kind.EQUAL,
    "/=": Kind.NOT_EQUAL,
    ":": Kind.IN,
    "<:": Kind.SUBSET_EQ,
    "<": Kind.LT,
    "<=": Kind.LE,
    ">": Kind.GT,
    ">=": Kind.GE,
}
_SET_OP_TOKENS = {
    "\\/": Kind.UNION,
    "/\\": Kind.INTER,
    "\\": Kind.SET_MINUS,
    "**": Kind.CART_PROD,
    "<+": Kind.OVERRIDE,
    "-->": Kind.TOTAL_FUN,
    "+->": Kind.PARTIAL_FUN,
    "<->": Kind.RELATION,
}
_ADD_TOKENS = {"+": Kind.ADD, "-": Kind.SUB}
_MUL_TOKENS = {"*": Kind.MUL, "/": Kind.DIV, "mod": Kind.MOD}
_PREFIX_TOKENS = {"POW": Kind.POW, "dom": Kind.DOM, "ran": Kind.RAN}


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.toks = tokens
        self.pos = 0
        self.furthest: Optional[ParseError] = None

    # helpers
    def peek(self) -> Token:
        return self.toks[self.pos]

    def at(self, text: str) -> bool:
        t = self.toks[self.pos]
        return t.kind in ("op", "kw") and t.text == text

    def advance(self) -> Token:
        t = self.toks[self.pos]
        self.pos += 1
        return t

    def fail(self, message: str, expected: set[str] | frozenset[str] = frozenset()) -> ParseError:
        t = self.peek()
        err = ParseError(message, t.span, frozenset(expected))
        best = self.furthest
        if best is None or err.span.start > best.span.start:
            self.furthest = err
        elif err.span.start == best.span.start:
            self.furthest = ParseError(best.message, best.span, best.expected | err.expected)
        return err

    def expect(self, text: str) -> Token:
        if not self.at(text):
            raise self.fail(f"unexpected {self.peek().text or 'end of input'!r}", {text})
        return self.advance()

    def _join(self, a: SourceSpan, b: SourceSpan) -> SourceSpan:
        return SourceSpan(a.start, b.end)

    def _mk(self, kind: Kind, children: tuple, start: SourceSpan, **kw) -> Formula:
        end = children[-1].span if children else start
        try:
            return Formula(kind, children, span=self._join(start, end), **kw)
        except ValueError as e:
            raise self.fail(str(e))

    # predicates
    def predicate(self) -> Formula:
        left = self.implication()
        if self.at("<=>"):
            self.advance()
            right = self.implication()
            if self.at("<=>"):
                raise self.fail("'<=>' is non-associative; add parentheses")
            left = self._mk(Kind.IFF, (left, right), left.span)
        return left

    def implication(self) -> Formula:
        left = self.disjunction()
        if self.at("=>"):
            self.advance()
            right = self.disjunction()
            if self.at("=>"):
                raise self.fail("'=>' is non-associative; add parentheses")
            left = self._mk(Kind.IMPLIES, (left, right), left.span)
        return left

    def disjunction(self) -> Formula:
        left = self.conjunction()
        while self.at("or"):
            self.advance()
            right = self.conjunction()
            left = self._mk(Kind.OR, (left, right), left.span)
        return left

    def conjunction(self) -> Formula:
        left = self.unary_predicate()
        while self.at("&"):
            self.advance()
            right = self.unary_predicate()
            left = self._mk(Kind.AND, (left, right), left.span)
        return left

    def unary_predicate(self) -> Formula:
        t = self.peek()
        if self.at("not"):
            self.advance()
            body = self.unary_predicate()
            return self._mk(Kind.NOT, (body,), t.span)
        if self.at("!") or self.at("#"):
            self.advance()
            names = [self.bound_name()]
            while self.at(","):
                self.advance()
                names.append(self.bound_name())
            self.expect(".")
            body = self.predicate()
            kind = Kind.FORALL if t.text == "!" else Kind.EXISTS
            return self._mk(kind, (body,), t.span, bound=tuple(names))
        return self.atomic_predicate()

    def bound_name(self) -> str:
        t = self.peek()
        if t.kind != "ident":
            raise self.fail("expected bound variable", {"identifier"})
        self.advance()
        return t.text

    def atomic_predicate(self) -> Formula:
        t = self.peek()
        if self.at("true") or self.at("false"):
            self.advance()
            return Formula(Kind.TRUE if t.text == "true" else Kind.FALSE, span=t.span)
        saved = self.pos
        try:
            return self.comparison()
        except ParseError:
            if not self.at_paren(saved):
                raise
        # "(" predicate ")"
        self.pos = saved
        self.advance()
        inner = self.predicate()
        close = self.expect(")")
        return _respan(inner, SourceSpan(t.span.start, close.span.end))

    def at_paren(self, pos: int) -> bool:
        t = self.toks[pos]
        return t.kind == "op" and t.text == "("

    def comparison(self) -> Formula:
        left = self.expression()
        t = self.peek()
        kind = _COMPARISON_TOKENS.get(t.text) if t.kind == "op" else None
        if kind is None:
            raise self.fail(f"unexpected {t.text or 'end of input'!r}", set(_COMPARISON_TOKENS))
        self.advance()
        right = self.expression()
        n = self.peek()
        if n.kind == "op" and n.text in _COMPARISON_TOKENS:
            raise self.fail("comparisons are non-associative; add parentheses")
        return self._mk(kind, (left, right), left.span)

    # expressions
    def expression(self) -> Formula:
        left = self.maplet()
        t = self.peek()
        if t.kind != "op" or t.text not in _SET_OP_TOKENS:
            return left
        op = t.text
        while True:
            t = self.peek()
            if t.kind != "op" or t.text not in _SET_OP_TOKENS:
                return left
            if t.text != op:
                raise self.fail(f"mixing {op!r} and {t.text!r} needs parentheses", {op})
            self.advance()
            right = self.maplet()
            left = self._mk(_SET_OP_TOKENS[op], (left, right), left.span)

    def maplet(self) -> Formula:
        left = self.additive()
        if self.at("|->"):
            self.advance()
            right = self.maplet()
            return self._mk(Kind.MAPLET, (left, right), left.span)
        return left

    def additive(self) -> Formula:
        left = self.multiplicative()
        while True:
            t = self.peek()
            kind = _ADD_TOKENS.get(t.text) if t.kind == "op" else None
            if kind is None:
                return left
            self.advance()
            right = self.multiplicative()
            left = self._mk(kind, (left, right), left.span)

    def multiplicative(self) -> Formula:
        left = self.negation()
        while True:
            t = self.peek()
            kind = _MUL_TOKENS.get(t.text) if t.kind in ("op", "kw") else None
            if kind is None:
                return left
            self.advance()
            right = self.negation()
            left = self._mk(kind, (left, right), left.span)

    def negation(self) -> Formula:
        t = self.peek()
        if self.at("-"):
            self.advance()
            n = self.peek()
            if n.kind != "int":
                raise self.fail("unary minus applies to integer literals only", {"integer"})
            self.advance()
            return Formula(Kind.INT_LIT, value=-int(n.text), span=SourceSpan(t.span.start, n.span.end))
        return self.postfix()

    def postfix(self) -> Formula:
        f = self.primary()
        while True:
            if self.at("("):
                self.advance()
                arg = self.expression()
                close = self.expect(")")
                f = Formula(Kind.FUN_APP, (f, arg), span=SourceSpan(f.span.start, close.span.end))
            elif self.at("["):
                self.advance()
                arg = self.expression()
                close = self.expect("]")
                f = Formula(Kind.IMAGE, (f, arg), span=SourceSpan(f.span.start, close.span.end))
            else:
                return f

    def primary(self) -> Formula:
        t = self.peek()
        if t.kind == "ident":
            self.advance()
            return Formula(Kind.IDENT, value=t.text, span=t.span)
        if t.kind == "meta":
            self.advance()
            return Formula(Kind.META_VAR, value=t.text, span=t.span)
        if t.kind == "int":
            self.advance()
            return Formula(Kind.INT_LIT, value=int(t.text), span=t.span)
        if t.kind == "kw":
            if t.text in ("NAT", "INT"):
                self.advance()
                return Formula(Kind.NAT if t.text == "NAT" else Kind.INT, span=t.span)
            if t.text in _PREFIX_TOKENS:
                self.advance()
                self.expect("(")
                arg = self.expression()
                close = self.expect(")")
                return Formula(_PREFIX_TOKENS[t.text], (arg,), span=SourceSpan(t.span.start, close.span.end))
        if self.at("("):
            self.advance()
            inner = self.expression()
            close = self.expect(")")
            return _respan(inner, SourceSpan(t.span.start, close.span.end))
        if self.at("{"):
            self.advance()
            items = [self.expression()]
            while self.at(","):
                self.advance()
                items.append(self.expression())
            close = self.expect("}")
            return Formula(Kind.SET_EXTENSION, tuple(items), span=SourceSpan(t.span.start, close.span.end))
        raise self.fail(
            f"unexpected {t.text or 'end of input'!r}",
            {"identifier", "integer", "(", "{", "NAT", "INT", "POW", "dom", "ran"},
        )

    def finish(self) -> None:
        if self.peek().kind != "eof":
            raise self.fail(f"unexpected trailing {self.peek().text!r}", {"end of input"})


def _respan(f: Formula, span: SourceSpan) -> Formula:
    return Formula(f.kind, f.children, f.value, f.bound, span)


def _run(text: str, entry: str, allow_meta: bool, allow_primes: bool) -> Formula:
    p = _Parser(tokenize(text, allow_meta=allow_meta, allow_primes=allow_primes))
    try:
        f = getattr(p, entry)()
        p.finish()
        return f
    except ParseError as e:
        raise p.furthest or e from None


def parse_predicate(text: str, *, allow_meta: bool = False, allow_primes: bool = False) -> Formula:
    return _run(text, "predicate", allow_meta, allow_primes)


def parse_expression(text: str, *, allow_meta: bool = False, allow_primes: bool = False) -> Formula:
    return _run(text, "expression", allow_meta, allow_primes)


def parse_formula(text: str, *, allow_meta: bool = False, allow_primes: bool = False) -> Formula:
    """Parse a predicate, or failing that an expression.

    Metavariables (``?x``) and primed identifiers (``x'``) are rejected unless
    explicitly allowed.  On failure the error reported is the one that got
    furthest into the input.
    """
    try:
        return parse_predicate(text, allow_meta=allow_meta, allow_primes=allow_primes)
    except ParseError as pred_err:
        try:
            return parse_expression(text, allow_meta=allow_meta, allow_primes=allow_primes)
        except ParseError as expr_err:
            if expr_err.span.start > pred_err.span.start:
                raise expr_err from None
            raise pred_err from None


# ---------------------------------------------------------------------------
# Printer
# ---------------------------------------------------------------------------

# binding strength used for minimal parenthesization
_PRED_LEVEL = {Kind.IFF: 1, Kind.IMPLIES: 2, Kind.OR: 3, Kind.AND: 4, Kind.NOT: 5}
_TIGHT = {Kind.ADD: "+", Kind.SUB: "-", Kind.MUL: "*", Kind.DIV: "/"}


def _pred_level(f: Formula) -> int:
    if f.kind in QUANTIFIERS:
        return 0  # always parenthesized as an operand
    return _PRED_LEVEL.get(f.kind, 6)


def _expr_level(f: Formula) -> int:
    k = f.kind
    if k in SET_OPS:
        return 1
    if k is Kind.MAPLET:
        return 2
    if k in ADDITIVE:
        return 3
    if k in MULTIPLICATIVE:
        return 4
    if k is Kind.INT_LIT and f.value < 0:  # type: ignore[operator]
        return 5
    if k in POSTFIX or k in PREFIX_CALLS:
        return 6
    return 7


class _Printer:
    def __init__(self, debug: bool):
        self.debug = debug

    def pred(self, f: Formula) -> str:
        k = f.kind
        if k is Kind.TRUE:
            return "true"
        if k is Kind.FALSE:
            return "false"
        if k in QUANTIFIERS:
            return f"{k.symbol}{','.join(f.bound)}. {self.pred(f.children[0])}"
        if k is Kind.NOT:
            return "not " + self.pred_operand(f.children[0], 5, strict=False)
        if k in COMPARISONS:
            a, b = f.children
            return f"{self.expr(a)} {k.symbol} {self.expr(b)}"
        level = _PRED_LEVEL[k]
        a, b = f.children
        if k in (Kind.IMPLIES, Kind.IFF):
            left = self.pred_operand(a, level, strict=True)
        else:
            left = self.pred_operand(a, level, strict=False)
        right = self.pred_operand(b, level, strict=True)
        return f"{left} {k.symbol} {right}"

    def pred_operand(self, f: Formula, level: int, strict: bool) -> str:
        lv = _pred_level(f)
        if lv < level or (strict and lv == level):
            return f"({self.pred(f)})"
        return self.pred(f)

    def expr(self, f: Formula) -> str:
        k = f.kind
        if k is Kind.IDENT:
            return f.value  # type: ignore[return-value]
        if k is Kind.INT_LIT:
            return str(f.value)
        if k is Kind.NAT:
            return "NAT"
        if k is Kind.INT:
            return "INT"
        if k is Kind.META_VAR:
            if not self.debug:
                raise FormulaError(f"metavariable ?{f.value} cannot be printed outside debug mode")
            return f"?{f.value}"
        if k is Kind.SET_EXTENSION:
            return "{" + ", ".join(self.expr(c) for c in f.children) + "}"
        if k in PREFIX_CALLS:
            return f"{k.symbol}({self.expr(f.children[0])})"
        if k in POSTFIX:
            fn, arg = f.children
            head = self.expr(fn) if _expr_level(fn) >= 6 else f"({self.expr(fn)})"
            return f"{head}({self.expr(arg)})" if k is Kind.FUN_APP else f"{head}[{self.expr(arg)}]"
        a, b = f.children
        if k in SET_OPS:
            left = self.expr(a)
            if _expr_level(a) < 1 or (a.kind in SET_OPS and a.kind is not k):
                left = f"({left})"
            right = self.expr_operand(b, 1, strict=True)
            return f"{left} {k.symbol} {right}"
        if k is Kind.MAPLET:
            return f"{self.expr_operand(a, 2, strict=True)} |-> {self.expr_operand(b, 2, strict=False)}"
        level = _expr_level(f)
        left = self.expr_operand(a, level, strict=False)
        right = self.expr_operand(b, level, strict=True)
        if k in _TIGHT:
            return f"{left}{_TIGHT[k]}{right}"
        return f"{left} {k.symbol} {right}"

    def expr_operand(self, f: Formula, level: int, strict: bool) -> str:
        lv = _expr_level(f)
        if lv < level or (strict and lv == level):
            return f"({self.expr(f)})"
        return self.expr(f)


def print_formula(f: Formula, *, debug: bool = False) -> str:
    """Canonical text with minimal parentheses.

    Quantifiers are parenthesized whenever they are an operand, since their
    body extends as far right as possible.
    """
    p = _Printer(debug)
    return p.pred(f) if f.is_predicate else p.expr(f)


# ---------------------------------------------------------------------------
# Identifier analysis, substitution, priming
# ---------------------------------------------------------------------------


def free_identifiers(f: Formula) -> set[str]:
    out: set[str] = set()

    def walk(g: Formula, bound: frozenset[str]) -> None:
        if g.kind is Kind.IDENT:
            if g.value not in bound:
                out.add(g.value)  # type: ignore[arg-type]
            return
        if g.kind in QUANTIFIERS:
            bound = bound | set(g.bound)
        for c in g.children:
            walk(c, bound)

    walk(f, frozenset())
    return out


def metavariables(f: Formula) -> set[str]:
    return {g.value for g in f.subterms() if g.kind is Kind.META_VAR}  # type: ignore[misc]


def _replace(f: Formula, binding: Mapping[str, Formula], target: Kind) -> Formula:
    free_of = {name: free_identifiers(e) for name, e in binding.items()}

    def walk(g: Formula, binders: tuple[str, ...], shadowed: frozenset[str]) -> Formula:
        if g.kind is target:
            name = g.value
            if name in binding and name not in shadowed:
                for b in reversed(binders):
                    if b in free_of[name]:  # type: ignore[index]
                        raise CaptureError(b, name)  # type: ignore[arg-type]
                return binding[name]  # type: ignore[index]
            return g
        if not g.children:
            return g
        if g.kind in QUANTIFIERS:
            binders = binders + g.bound
            if target is Kind.IDENT:
                shadowed = shadowed | set(g.bound)
        kids = tuple(walk(c, binders, shadowed) for c in g.children)
        if all(a is b for a, b in zip(kids, g.children)):
            return g
        return Formula(g.kind, kids, g.value, g.bound, g.span)

    return walk(f, (), frozenset())


def substitute(f: Formula, binding: Mapping[str, Formula]) -> Formula:
    """Replace free occurrences of identifiers; raise CaptureError on capture."""
    return _replace(f, binding, Kind.IDENT)


def substitute_meta(f: Formula, binding: Mapping[str, Formula]) -> Formula:
    """Replace metavariables (?name) by formulas; binders never shadow metavariables."""
    return _replace(f, binding, Kind.META_VAR)


def prime(f: Formula, variables: set[str] | frozenset[str]) -> Formula:
    if not variables:
        return f
    return substitute(f, {v: Formula.ident(v + "'") for v in variables})


def rename_bound(f: Formula) -> Formula:
    """Alpha-normalize: rename bound variables by binding position.

    The generated names contain characters that cannot occur in parsed
    identifiers, so no free identifier is ever captured.
    """
    counter = 0

    def walk(g: Formula, env: dict[str, str]) -> Formula:
        nonlocal counter
        if g.kind is Kind.IDENT:
            new = env.get(g.value)  # type: ignore[arg-type]
            return g if new is None else Formula(Kind.IDENT, value=new)
        if not g.children:
            return g
        bound = g.bound
        if g.kind in QUANTIFIERS:
            env = dict(env)
            fresh = []
            for name in bound:
                counter += 1
                env[name] = f"%{counter}"
                fresh.append(f"%{counter}")
            bound = tuple(fresh)
        return Formula(g.kind, tuple(walk(c, env) for c in g.children), g.value, bound)

    return walk(f, {})


# ---------------------------------------------------------------------------
# Hashing
# ---------------------------------------------------------------------------

FNV_OFFSET = _kernels._pure.FNV_OFFSET
FNV_PRIME = _kernels._pure.FNV_PRIME
_KIND_NAMES = {k: k.name for k in Kind}


def fnv1a_64(data: bytes, h: int = FNV_OFFSET) -> int:
    return _kernels.fnv1a_64(data, h)


def serialize(f: Formula) -> str:
    """Canonical pre-order serialization used for hashing.

    One record per node: ``<KIND>[<payload>]<child count>;`` where payload is
    the identifier/metavariable name, the integer value, or the comma-joined
    bound list.
    """
    parts: list[str] = []
    append = parts.append
    stack = [f]
    pop, extend = stack.pop, stack.extend
    names = _KIND_NAMES
    while stack:
        g = pop()
        kids = g.children
        if g.kind in QUANTIFIERS:
            payload = ",".join(g.bound)
        elif g.value is None:
            payload = ""
        else:
            payload = str(g.value)
        append(f"{names[g.kind]}[{payload}]{len(kids)};")
        if kids:
            extend(kids[::-1])
    return "".join(parts)


def formula_hash(f: Formula) -> int:
    return fnv1a_64(serialize(f).encode("utf-8"))


def sequent_hash(hypotheses: list[Formula] | tuple[Formula, ...], goal: Formula) -> int:
    text = "".join("H:" + serialize(h) for h in hypotheses) + "G:" + serialize(goal)
    return fnv1a_64(text.encode("utf-8"))


# ---------------------------------------------------------------------------
# Primed definitions
# ---------------------------------------------------------------------------


def primed_definitions(hypotheses: list[Formula] | tuple[Formula, ...]) -> dict[str, Formula]:
    """Equalities ``x' = E`` among the hypotheses (first definition wins)."""
    defs: dict[str, Formula] = {}
    for h in hypotheses:
        if h.kind is not Kind.EQUAL:
            continue
        lhs, rhs = h.children
        if lhs.kind is Kind.IDENT and lhs.value.endswith("'") and lhs.value not in defs:  # type: ignore[union-attr]
            if lhs.value not in free_identifiers(rhs):
                defs[lhs.value] = rhs  # type: ignore[index]
    return defs


def expand_primed(f: Formula, hypotheses: list[Formula] | tuple[Formula, ...]) -> Optional[Formula]:
    """Rewrite every defined primed identifier in ``f`` by its definition.

    Returns None when nothing applies or the rewrite would capture.
    """
    defs = primed_definitions(hypotheses)
    used = {name: e for name, e in defs.items() if name in free_identifiers(f)}
    if not used:
        return None
    try:
        return substitute(f, used)
    except CaptureError:
        return None
