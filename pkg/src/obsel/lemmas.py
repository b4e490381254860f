"""Schematic lemma store: visibility scoping, trigger matching, instantiation."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal, Mapping, Optional, Sequence

from obsel.formula import (
    Formula,
    FormulaError,
    Kind,
    QUANTIFIERS,
    expand_primed,
    free_identifiers,
    metavariables,
    parse_formula,
    substitute_meta,
)
from obsel.shingles import build_weight_table, profile
from obsel.similarity import ScoreParams, weighted_score

Binding = dict[str, Formula]
ScopeKind = Literal["global", "project", "machine"]
_SCOPE_RANK = {"global": 0, "project": 1, "machine": 2}


class LemmaError(Exception):
    pass


class IncompleteBinding(LemmaError):
    def __init__(self, missing: Iterable[str]):
        self.missing = tuple(sorted(missing))
        super().__init__(f"binding lacks parameters: {', '.join(self.missing)}")


@dataclass(frozen=True, order=True)
class Scope:
    kind: ScopeKind
    owner: Optional[str] = None

    def __post_init__(self) -> None:
        if self.kind not in _SCOPE_RANK:
            raise LemmaError(f"unknown scope {self.kind!r}")
        if (self.kind == "global") != (self.owner is None):
            raise LemmaError("global scope takes no id; project/machine scopes need one")

    def __str__(self) -> str:
        return self.kind if self.owner is None else f"{self.kind} {self.owner}"

    @classmethod
    def parse(cls, text: str) -> "Scope":
        parts = text.split()
        if parts == ["global"]:
            return cls("global")
        if len(parts) == 2 and parts[0] in ("project", "machine"):
            return cls(parts[0], parts[1])  # type: ignore[arg-type]
        raise LemmaError(f"bad scope {text!r}")


GLOBAL = Scope("global")


@dataclass(frozen=True)
class SchematicLemma:
    name: str
    statement: Formula
    trigger: Formula
    params: tuple[str, ...] = ()
    scope: Scope = GLOBAL

    def __post_init__(self) -> None:
        in_trigger = metavariables(self.trigger)
        missing = [p for p in self.params if p not in in_trigger]
        if missing:
            raise LemmaError(f"{self.name}: parameters {missing} do not occur in the trigger")
        undeclared = metavariables(self.statement) - set(self.params)
        if undeclared:
            raise LemmaError(f"{self.name}: statement uses undeclared metavariables {sorted(undeclared)}")
        if not self.statement.is_predicate or not self.trigger.is_predicate:
            raise LemmaError(f"{self.name}: statement and trigger must be predicates")

    def to_text(self) -> str:
        from obsel.formula import print_formula

        return (
            f"name: {self.name}\n"
            f"scope: {self.scope}\n"
            f"params: {' '.join(self.params)}\n"
            f"trigger: {print_formula(self.trigger, debug=True)}\n"
            f"statement: {print_formula(self.statement, debug=True)}\n"
        )


_LINE = re.compile(r"^\s*(name|scope|params|trigger|statement)\s*:\s?(.*)$")


def parse_lemma(text: str, origin: str = "<lemma>") -> SchematicLemma:
    fields: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        m = _LINE.match(line)
        if not m:
            raise LemmaError(f"{origin}:{lineno}: unrecognised line {line!r}")
        key, value = m.groups()
        if key in fields:
            raise LemmaError(f"{origin}:{lineno}: duplicate field {key!r}")
        fields[key] = value.strip()
    for key in ("name", "trigger", "statement"):
        if key not in fields:
            raise LemmaError(f"{origin}: missing field {key!r}")
    try:
        trigger = parse_formula(fields["trigger"], allow_meta=True)
        statement = parse_formula(fields["statement"], allow_meta=True)
    except FormulaError as e:
        raise LemmaError(f"{origin}: {e}") from e
    return SchematicLemma(
        name=fields["name"],
        statement=statement,
        trigger=trigger,
        params=tuple(fields.get("params", "").split()),
        scope=Scope.parse(fields.get("scope", "global")),
    )


@dataclass
class LemmaStore:
    lemmas: list[SchematicLemma] = field(default_factory=list)

    def __post_init__(self) -> None:
        seen: set[tuple[Scope, str]] = set()
        for lem in self.lemmas:
            key = (lem.scope, lem.name)
            if key in seen:
                raise LemmaError(f"duplicate lemma {lem.name!r} in scope {lem.scope}")
            seen.add(key)

    def add(self, lemma: SchematicLemma) -> None:
        if any(l.scope == lemma.scope and l.name == lemma.name for l in self.lemmas):
            raise LemmaError(f"duplicate lemma {lemma.name!r} in scope {lemma.scope}")
        self.lemmas.append(lemma)

    def __len__(self) -> int:
        return len(self.lemmas)

    @classmethod
    def load(cls, directory: str | Path) -> "LemmaStore":
        """Load every ``*.lemma`` file in ``directory`` (sorted by file name)."""
        root = Path(directory)
        if not root.is_dir():
            raise LemmaError(f"lemma store {root} is not a directory")
        return cls([parse_lemma(p.read_text(encoding="utf-8"), str(p)) for p in sorted(root.glob("*.lemma"))])


def lemmas_in_scope(store: LemmaStore, machine: str, project: str) -> list[SchematicLemma]:
    visible = [
        l
        for l in store.lemmas
        if l.scope.kind == "global"
        or (l.scope.kind == "project" and l.scope.owner == project)
        or (l.scope.kind == "machine" and l.scope.owner == machine)
    ]
    return sorted(visible, key=lambda l: (_SCOPE_RANK[l.scope.kind], l.name))


# ---------------------------------------------------------------------------
# Matching
# ---------------------------------------------------------------------------


def match(pattern: Formula, target: Formula, binding: Optional[Mapping[str, Formula]] = None) -> Optional[Binding]:
    """First-order syntactic match of ``pattern`` against the root of ``target``."""
    out: Binding = dict(binding or {})
    stack = [(pattern, target)]
    while stack:
        p, t = stack.pop()
        if p.kind is Kind.META_VAR:
            prev = out.get(p.value)  # type: ignore[arg-type]
            if prev is None:
                if t.contains_meta():
                    return None
                out[p.value] = t  # type: ignore[index]
            elif prev != t:
                return None
            continue
        if p.kind is not t.kind or p.value != t.value or p.bound != t.bound:
            return None
        if len(p.children) != len(t.children):
            return None
        stack.extend(zip(reversed(p.children), reversed(t.children)))
    return out


def match_trigger(trigger: Formula, target: Formula) -> list[Binding]:
    """All distinct bindings under which the trigger equals a subterm of ``target``.

    Subterms are visited top-down, left-to-right.  A binding whose values
    mention a variable bound above the matched subterm is discarded.
    """
    results: list[Binding] = []
    stack: list[tuple[Formula, frozenset[str]]] = [(target, frozenset())]
    while stack:
        t, bound = stack.pop()
        b = match(trigger, t)
        if b is not None and b not in results:
            if not bound or not any(free_identifiers(v) & bound for v in b.values()):
                results.append(b)
        inner = bound | set(t.bound) if t.kind in QUANTIFIERS else bound
        stack.extend((c, inner) for c in reversed(t.children))
    return results


def instantiate(lemma: SchematicLemma, binding: Mapping[str, Formula]) -> Formula:
    missing = [p for p in lemma.params if p not in binding]
    if missing:
        raise IncompleteBinding(missing)
    result = substitute_meta(lemma.statement, {p: binding[p] for p in lemma.params})
    if result.contains_meta():
        raise LemmaError(f"{lemma.name}: instantiation left metavariables behind")
    return result


@dataclass(frozen=True)
class Suggestion:
    lemma: SchematicLemma
    binding: Binding
    formula: Formula
    score: float


def match_targets(goal: Formula, hypotheses: Sequence[Formula]) -> list[Formula]:
    """Goal, goal with primed definitions expanded, then each hypothesis."""
    targets = [goal]
    expanded = expand_primed(goal, tuple(hypotheses))
    if expanded is not None:
        targets.append(expanded)
    targets.extend(hypotheses)
    return targets


def suggest_lemmas(
    goal: Formula,
    hypotheses: Sequence[Formula],
    lemmas: Sequence[SchematicLemma],
    params: ScoreParams = ScoreParams(),
) -> list[Suggestion]:
    """Instantiate every in-scope lemma whose trigger matches, ranked by similarity to the goal."""
    targets = match_targets(goal, hypotheses)
    found: list[tuple[SchematicLemma, Binding, Formula]] = []
    seen: set[Formula] = set()
    for lemma in lemmas:
        for target in targets:
            for b in match_trigger(lemma.trigger, target):
                try:
                    inst = instantiate(lemma, b)
                except FormulaError:
                    continue
                if inst in seen:
                    continue
                seen.add(inst)
                found.append((lemma, b, inst))
    if not found:
        return []
    pool = [profile(h, params.n) for h in hypotheses] + [profile(f, params.n) for _, _, f in found]
    table = build_weight_table(pool, params.tau)
    gp = profile(goal, params.n)
    scored = [
        (weighted_score(gp, pool[len(hypotheses) + i], table, params), i)
        for i in range(len(found))
    ]
    scored.sort(key=lambda si: (-si[0], found[si[1]][0].name, si[1]))
    return [Suggestion(found[i][0], found[i][1], found[i][2], s) for s, i in scored]
