"""Machine models and invariant-preservation proof obligations."""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Literal, Optional, Sequence

from obsel.formula import (
    Formula,
    Kind,
    ParseError,
    SourceSpan,
    free_identifiers,
    parse_expression,
    parse_predicate,
    prime,
    print_formula,
    sequent_hash,
)


class ModelError(Exception):
    def __init__(self, message: str, span: Optional[SourceSpan] = None):
        self.span = span
        where = f" at {span.start}..{span.end}" if span is not None else ""
        super().__init__(message + where)


class DuplicateName(ModelError):
    pass


class UndeclaredIdentifier(ModelError):
    pass


@dataclass(frozen=True)
class Labeled:
    label: str
    formula: Formula


ActionKind = Literal[":=", ":|"]


@dataclass(frozen=True)
class Action:
    label: str
    variable: str
    kind: ActionKind
    formula: Formula


@dataclass(frozen=True)
class Event:
    name: str
    parameters: tuple[str, ...] = ()
    guards: tuple[Labeled, ...] = ()
    actions: tuple[Action, ...] = ()

    @property
    def assigned(self) -> tuple[str, ...]:
        return tuple(a.variable for a in self.actions)


@dataclass(frozen=True)
class MachineModel:
    name: str
    project: str = "default"
    sets: tuple[str, ...] = ()
    constants: tuple[str, ...] = ()
    axioms: tuple[Labeled, ...] = ()
    variables: tuple[str, ...] = ()
    invariants: tuple[Labeled, ...] = ()
    events: tuple[Event, ...] = ()


# ---------------------------------------------------------------------------
# Machine file parser
# ---------------------------------------------------------------------------

_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*$")
_LABELED = re.compile(r"@([A-Za-z_][A-Za-z0-9_]*)\s+(.*)$")
_ACTION = re.compile(r"([A-Za-z_][A-Za-z0-9_]*)\s*(:=|:\|)\s*(.*)$")
_SECTIONS = ("sets", "constants", "axioms", "variables", "invariants", "events")


@dataclass
class _Line:
    text: str  # stripped
    offset: int  # byte offset of the stripped text

    def span(self) -> SourceSpan:
        return SourceSpan(self.offset, self.offset + len(self.text.encode("utf-8")))


def _lines(text: str) -> list[_Line]:
    out = []
    offset = 0
    for raw in text.splitlines(keepends=True):
        body = raw.split("//", 1)[0].rstrip()
        stripped = body.lstrip()
        if stripped:
            lead = len(body[: len(body) - len(stripped)].encode("utf-8"))
            out.append(_Line(stripped, offset + lead))
        offset += len(raw.encode("utf-8"))
    return out


def _shift(err: ParseError, base: int) -> ParseError:
    return ParseError(err.message, SourceSpan(err.span.start + base, err.span.end + base), err.expected)


class _MachineParser:
    def __init__(self, text: str):
        self.lines = _lines(text)
        self.i = 0

    def peek(self) -> Optional[_Line]:
        return self.lines[self.i] if self.i < len(self.lines) else None

    def first_word(self) -> str:
        line = self.peek()
        return line.text.split()[0] if line else ""

    def error(self, message: str, line: Optional[_Line] = None) -> ParseError:
        line = line or self.peek()
        span = line.span() if line else SourceSpan(0, 0)
        return ParseError(message, span)

    def formula(self, text: str, line: _Line, col: int, *, predicate: bool, primes: bool = False) -> Formula:
        base = line.offset + len(line.text[:col].encode("utf-8"))
        try:
            if predicate:
                return parse_predicate(text, allow_primes=primes)
            return parse_expression(text, allow_primes=primes)
        except ParseError as e:
            raise _shift(e, base) from None

    def names(self, words: list[str], line: _Line) -> list[str]:
        for w in words:
            if not _IDENT.match(w):
                raise self.error(f"bad identifier {w!r}", line)
        return words

    def labeled_block(self, stop: tuple[str, ...]) -> list[tuple[str, str, _Line, int]]:
        items: list[tuple[str, str, _Line, int]] = []
        while (line := self.peek()) is not None and self.first_word() not in stop:
            m = _LABELED.match(line.text)
            if m:
                items.append((m.group(1), m.group(2), line, m.start(2)))
            elif items:
                label, body, first, col = items[-1]
                items[-1] = (label, body + " " + line.text, first, col)
            else:
                raise self.error("expected '@label formula'", line)
            self.i += 1
        return items

    def parse(self) -> MachineModel:
        header = self.peek()
        if header is None:
            raise ParseError("empty machine file", SourceSpan(0, 0), frozenset({"machine"}))
        words = header.text.split()
        if words[0] != "machine" or len(words) not in (2, 4) or (len(words) == 4 and words[2] != "project"):
            raise self.error("expected 'machine <name> [project <id>]'", header)
        name = self.names([words[1]], header)[0]
        project = words[3] if len(words) == 4 else "default"
        self.i += 1

        sets: list[str] = []
        constants: list[str] = []
        variables: list[str] = []
        raw_axioms: list = []
        raw_invariants: list = []
        raw_events: list = []
        while (line := self.peek()) is not None:
            word = self.first_word()
            rest = line.text.split()[1:]
            self.i += 1
            if word in ("sets", "constants", "variables"):
                target = {"sets": sets, "constants": constants, "variables": variables}[word]
                target.extend(self.names(rest, line))
                while (nxt := self.peek()) is not None and self.first_word() not in _SECTIONS + ("end",):
                    target.extend(self.names(nxt.text.split(), nxt))
                    self.i += 1
            elif word in ("axioms", "invariants"):
                if rest:
                    raise self.error(f"'{word}' takes no arguments", line)
                block = self.labeled_block(_SECTIONS + ("end",))
                (raw_axioms if word == "axioms" else raw_invariants).extend(block)
            elif word == "events":
                raw_events.extend(self.events())
            elif word == "end":
                if self.peek() is not None:
                    raise self.error("text after final 'end'")
            else:
                raise self.error(f"unknown section {word!r}", line)

        declared: dict[str, str] = {}
        for kind, names in (("set", sets), ("constant", constants), ("variable", variables)):
            for n in names:
                if n in declared:
                    raise DuplicateName(f"{kind} {n!r} already declared as {declared[n]}")
                declared[n] = kind

        axioms = self.labeled(raw_axioms, "axiom")
        invariants = self.labeled(raw_invariants, "invariant")
        events = [self.event(e, set(variables)) for e in raw_events]
        _unique([e.name for e in events], "event")
        model = MachineModel(
            name=name,
            project=project,
            sets=tuple(sets),
            constants=tuple(constants),
            axioms=tuple(axioms),
            variables=tuple(variables),
            invariants=tuple(invariants),
            events=tuple(events),
        )
        check_model(model)
        return model

    def labeled(self, raw: list, what: str) -> list[Labeled]:
        out = [Labeled(label, self.formula(body, line, col, predicate=True)) for label, body, line, col in raw]
        _unique([l.label for l in out], what)
        return out

    def events(self) -> list:
        raw = []
        while (line := self.peek()) is not None and self.first_word() == "event":
            words = line.text.split()
            self.i += 1
            if len(words) < 2:
                raise self.error("expected 'event <name>'", line)
            ev_name = self.names([words[1]], line)[0]
            params: list[str] = []
            rest = words[2:]
            if rest and rest[-1] in ("where", "begin", "then"):
                opener = rest.pop()
            else:
                opener = None
            if rest:
                if rest[0] != "any":
                    raise self.error(f"unexpected {rest[0]!r} in event header", line)
                params = self.names(rest[1:], line)
            guards: list = []
            if opener not in ("begin", "then"):
                if self.first_word() == "where":
                    self.i += 1
                guards = self.labeled_block(("then", "begin", "end"))
                if self.first_word() in ("then", "begin"):
                    self.i += 1
            actions = self.labeled_block(("end",))
            if self.first_word() != "end":
                raise self.error(f"event {ev_name!r} is missing 'end'", self.peek() or line)
            self.i += 1
            raw.append((ev_name, params, guards, actions, line))
        return raw

    def event(self, raw, variables: set[str]) -> Event:
        ev_name, params, raw_guards, raw_actions, line = raw
        _unique(params, f"parameter of {ev_name}")
        for p in params:
            if p in variables:
                raise DuplicateName(f"parameter {p!r} of {ev_name} shadows a variable", line.span())
        guards = self.labeled(raw_guards, f"guard of {ev_name}")
        actions = []
        for label, body, aline, col in raw_actions:
            m = _ACTION.match(body)
            if not m:
                raise self.error("expected 'x := E' or 'x :| P'", aline)
            var, op, rhs = m.groups()
            if var not in variables:
                raise UndeclaredIdentifier(f"event {ev_name!r} assigns undeclared variable {var!r}", aline.span())
            rhs_col = col + m.start(3)
            if op == ":=":
                f = self.formula(rhs, aline, rhs_col, predicate=False)
            else:
                f = self.formula(rhs, aline, rhs_col, predicate=True, primes=True)
            actions.append(Action(label, var, op, f))  # type: ignore[arg-type]
        _unique([a.label for a in actions] + [g.label for g in guards], f"label in {ev_name}")
        _unique([a.variable for a in actions], f"assigned variable in {ev_name}")
        return Event(ev_name, tuple(params), tuple(guards), tuple(actions))


def _unique(names: Sequence[str], what: str) -> None:
    seen: set[str] = set()
    for n in names:
        if n in seen:
            raise DuplicateName(f"duplicate {what} {n!r}")
        seen.add(n)


def check_model(m: MachineModel) -> None:
    """Every formula may only mention declared identifiers (and bound variables)."""
    context = set(m.sets) | set(m.constants)
    state = context | set(m.variables)

    def check(f: Formula, allowed: set[str], where: str) -> None:
        unknown = free_identifiers(f) - allowed
        if unknown:
            raise UndeclaredIdentifier(f"{where} mentions undeclared {sorted(unknown)}", f.span)

    for a in m.axioms:
        check(a.formula, context, f"axiom {a.label}")
    for inv in m.invariants:
        check(inv.formula, state, f"invariant {inv.label}")
    for ev in m.events:
        local = state | set(ev.parameters)
        for g in ev.guards:
            check(g.formula, local, f"guard {ev.name}/{g.label}")
        for act in ev.actions:
            allowed = local | {v + "'" for v in ev.assigned} if act.kind == ":|" else local
            check(act.formula, allowed, f"action {ev.name}/{act.label}")


def parse_machine(text: str) -> MachineModel:
    return _MachineParser(text).parse()


def load_machine(path: str | Path) -> MachineModel:
    return parse_machine(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# Proof obligations
# ---------------------------------------------------------------------------

Origin = Literal["axiom", "invariant", "guard", "BA", "frame", "lemma"]
ORIGINS = ("axiom", "invariant", "guard", "BA", "frame", "lemma")


@dataclass(frozen=True)
class Hypothesis:
    origin: Origin
    label: str
    formula: Formula


@dataclass(frozen=True)
class ProofObligation:
    id: str
    hypotheses: tuple[Hypothesis, ...]
    goal: Formula
    machine: str
    project: str
    sets: tuple[str, ...] = ()
    constants: tuple[str, ...] = ()
    variables: tuple[str, ...] = ()
    parameters: tuple[str, ...] = ()
    hash: int = field(default=0, compare=False)

    def __post_init__(self) -> None:
        if self.goal.contains_meta() or any(h.formula.contains_meta() for h in self.hypotheses):
            raise ValueError(f"{self.id}: proof obligations must not contain metavariables")
        object.__setattr__(self, "hash", sequent_hash(self.formulas, self.goal))

    @property
    def formulas(self) -> tuple[Formula, ...]:
        return tuple(h.formula for h in self.hypotheses)

    @property
    def event(self) -> str:
        return self.id.split("/")[1]

    def file_name(self) -> str:
        return self.id.replace("/", ".") + ".po"


def generate_inv_pos(m: MachineModel) -> list[ProofObligation]:
    """One invariant-preservation obligation per (event, invariant) pair, sorted by id."""
    pos = []
    base = [Hypothesis("axiom", a.label, a.formula) for a in m.axioms]
    base += [Hypothesis("invariant", i.label, i.formula) for i in m.invariants]
    variables = set(m.variables)
    for ev in m.events:
        hyps = list(base)
        hyps += [Hypothesis("guard", g.label, g.formula) for g in ev.guards]
        for act in ev.actions:
            if act.kind == ":=":
                ba = Formula.op(Kind.EQUAL, Formula.ident(act.variable + "'"), act.formula)
            else:
                ba = act.formula
            hyps.append(Hypothesis("BA", act.label, ba))
        assigned = set(ev.assigned)
        for v in m.variables:
            if v not in assigned:
                eq = Formula.op(Kind.EQUAL, Formula.ident(v + "'"), Formula.ident(v))
                hyps.append(Hypothesis("frame", v, eq))
        for inv in m.invariants:
            pos.append(
                ProofObligation(
                    id=f"{m.name}/{ev.name}/{inv.label}/INV",
                    hypotheses=tuple(hyps),
                    goal=prime(inv.formula, variables),
                    machine=m.name,
                    project=m.project,
                    sets=m.sets,
                    constants=m.constants,
                    variables=m.variables,
                    parameters=ev.parameters,
                )
            )
    return sorted(pos, key=lambda po: po.id)


def assemble_sequent(
    po: ProofObligation,
    selection: Sequence,
    lemma_instantiations: Sequence[Formula | tuple[str, Formula]] = (),
) -> ProofObligation:
    """Keep the selected hypotheses (original order) and append instantiated lemmas.

    ``selection`` holds RankedCandidate values or plain hypothesis indices;
    lemma candidates are ignored.
    """
    keep: set[int] = set()
    for cand in selection:
        if isinstance(cand, int):
            idx = cand
        elif getattr(cand, "source", "hyp") == "hyp":
            idx = cand.index
        else:
            continue
        if not 0 <= idx < len(po.hypotheses):
            raise IndexError(f"hypothesis index {idx} out of range for {po.id}")
        keep.add(idx)
    hyps = [h for i, h in enumerate(po.hypotheses) if i in keep]
    for j, item in enumerate(lemma_instantiations):
        name, f = item if isinstance(item, tuple) else (f"lemma{j}", item)
        hyps.append(Hypothesis("lemma", name, f))
    return replace(po, hypotheses=tuple(hyps))


# ---------------------------------------------------------------------------
# .po files
# ---------------------------------------------------------------------------


def format_po(po: ProofObligation) -> str:
    lines = [
        f"po {po.id}",
        f"machine {po.machine}",
        f"project {po.project}",
        "sets " + " ".join(po.sets),
        "constants " + " ".join(po.constants),
        "variables " + " ".join(po.variables),
        "parameters " + " ".join(po.parameters),
    ]
    lines += [f"{h.origin} {h.label}: {print_formula(h.formula)}" for h in po.hypotheses]
    lines.append(f"goal: {print_formula(po.goal)}")
    return "\n".join(line.rstrip() for line in lines) + "\n"


_HYP_LINE = re.compile(r"^(axiom|invariant|guard|BA|frame|lemma)\s+([^\s:]+):\s(.*)$")


def parse_po(text: str) -> ProofObligation:
    meta: dict[str, str] = {}
    hyps: list[Hypothesis] = []
    goal: Optional[Formula] = None
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            m = _HYP_LINE.match(line)
            if m:
                hyps.append(Hypothesis(m.group(1), m.group(2), parse_predicate(m.group(3), allow_primes=True)))  # type: ignore[arg-type]
                continue
            if line.startswith("goal:"):
                goal = parse_predicate(line[5:].strip(), allow_primes=True)
                continue
        except ParseError as e:
            raise ModelError(f"line {lineno}: {e}") from e
        key, _, value = line.partition(" ")
        if key not in ("po", "machine", "project", "sets", "constants", "variables", "parameters"):
            raise ModelError(f"line {lineno}: unrecognised line {line!r}")
        meta[key] = value.strip()
    if goal is None or "po" not in meta:
        raise ModelError("proof obligation file needs 'po' and 'goal' lines")
    return ProofObligation(
        id=meta["po"],
        hypotheses=tuple(hyps),
        goal=goal,
        machine=meta.get("machine", "unknown"),
        project=meta.get("project", "default"),
        sets=tuple(meta.get("sets", "").split()),
        constants=tuple(meta.get("constants", "").split()),
        variables=tuple(meta.get("variables", "").split()),
        parameters=tuple(meta.get("parameters", "").split()),
    )


def load_po(path: str | Path) -> ProofObligation:
    return parse_po(Path(path).read_text(encoding="utf-8"))
