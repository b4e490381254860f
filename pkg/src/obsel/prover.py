"""Sequent translation, external prover dispatch, the stub prover and the attempt ledger."""

from __future__ import annotations

import enum
import json
import os
import re
import shlex
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Iterable, Literal, Optional, Sequence

from obsel.formula import (
    QUANTIFIERS,
    CaptureError,
    Formula,
    Kind,
    expand_primed,
    free_identifiers,
    print_formula,
    rename_bound,
    substitute,
    substitute_meta,
)
from obsel.lemmas import match
from obsel.machine import ProofObligation

try:
    import fcntl
except ImportError:  # pragma: no cover - non-POSIX
    fcntl = None  # type: ignore[assignment]


class Verdict(str, enum.Enum):
    VALID = "Valid"
    INVALID = "Invalid"
    UNKNOWN = "Unknown"
    TIMEOUT = "Timeout"
    TOOL_ERROR = "ToolError"

    def __str__(self) -> str:
        return self.value


class TranslationError(Exception):
    pass


class UnmappedOperator(TranslationError):
    def __init__(self, kind: Kind):
        self.kind = kind
        super().__init__(f"no translation entry for operator {kind_name(kind)}")


def kind_name(kind: Kind) -> str:
    """CamelCase operator name as used in map files (TOTAL_FUN -> TotalFun)."""
    return "".join(part.capitalize() for part in kind.name.split("_"))


_KIND_BY_NAME = {kind_name(k): k for k in Kind}


def kind_from_name(name: str) -> Kind:
    try:
        return _KIND_BY_NAME[name]
    except KeyError:
        raise TranslationError(f"unknown operator kind {name!r}") from None


# ---------------------------------------------------------------------------
# Translation maps
# ---------------------------------------------------------------------------

Style = Literal["infix", "prefix", "binder"]
NATIVE = frozenset({Kind.IDENT, Kind.INT_LIT})


@dataclass(frozen=True)
class OpEntry:
    symbol: str
    style: Style


@dataclass(frozen=True)
class PreludeBlock:
    name: str
    supports: frozenset[Kind]
    text: str


@dataclass(frozen=True)
class TranslationMap:
    ops: dict[Kind, OpEntry]
    blocks: tuple[PreludeBlock, ...] = ()
    header: tuple[str, ...] = ()
    universe: str = "univ"

    def __post_init__(self) -> None:
        names = [b.name for b in self.blocks]
        if len(set(names)) != len(names):
            raise TranslationError("prelude block names must be unique")
        for kind, entry in self.ops.items():
            if entry.style == "binder" and kind not in QUANTIFIERS:
                raise TranslationError(f"{kind_name(kind)}: only quantifiers use the binder style")
            if kind in QUANTIFIERS and entry.style != "binder":
                raise TranslationError(f"{kind_name(kind)}: quantifiers need the binder style")
            if entry.style == "infix" and not _binary(kind):
                raise TranslationError(f"{kind_name(kind)}: infix needs a binary operator")

    def missing_kinds(self) -> set[Kind]:
        """Operator kinds that may occur in an obligation but have no entry."""
        return {k for k in Kind if k not in NATIVE and k is not Kind.META_VAR and k not in self.ops}

    def blocks_for(self, kinds: Iterable[Kind]) -> list[PreludeBlock]:
        present = set(kinds)
        return [b for b in self.blocks if b.supports & present]


def _binary(kind: Kind) -> bool:
    probe = {Kind.NOT, Kind.POW, Kind.DOM, Kind.RAN, Kind.SET_EXTENSION}
    return kind not in probe and kind not in QUANTIFIERS and kind not in (
        Kind.TRUE, Kind.FALSE, Kind.IDENT, Kind.INT_LIT, Kind.NAT, Kind.INT, Kind.META_VAR
    )


_OP_LINE = re.compile(r"^op\s+(\w+)\s*->\s*(\S+)\s+(infix|prefix|binder)\s*$")
_BLOCK_LINE = re.compile(r"^block\s+(\w+)\s+supports\s+([\w,\s]+)$")


def parse_translation_map(text: str) -> TranslationMap:
    ops: dict[Kind, OpEntry] = {}
    blocks: list[PreludeBlock] = []
    header: list[str] = []
    universe = "univ"
    current: Optional[tuple[str, frozenset[Kind], list[str]]] = None

    def close() -> None:
        nonlocal current
        if current is not None:
            name, supports, body = current
            while body and not body[-1].strip():
                body.pop()
            blocks.append(PreludeBlock(name, supports, "\n".join(body)))
            current = None

    for lineno, raw in enumerate(text.splitlines(), 1):
        if current is not None and (raw.startswith((" ", "\t")) or not raw.strip()):
            current[2].append(raw[2:] if raw.startswith("  ") else raw.strip())
            continue
        close()
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if m := _OP_LINE.match(line):
            kind = kind_from_name(m.group(1))
            if kind in ops:
                raise TranslationError(f"line {lineno}: duplicate entry for {m.group(1)}")
            ops[kind] = OpEntry(m.group(2), m.group(3))  # type: ignore[arg-type]
        elif m := _BLOCK_LINE.match(line):
            kinds = frozenset(kind_from_name(k.strip()) for k in m.group(2).split(",") if k.strip())
            current = (m.group(1), kinds, [])
        elif line.startswith("header "):
            header.append(line[len("header ") :])
        elif line.startswith("universe "):
            universe = line.split()[1]
        else:
            raise TranslationError(f"line {lineno}: unrecognised line {line!r}")
    close()
    return TranslationMap(ops, tuple(blocks), tuple(header), universe)


def load_translation_map(path: str | Path) -> TranslationMap:
    return parse_translation_map(Path(path).read_text(encoding="utf-8"))


def default_translation_map() -> TranslationMap:
    text = resources.files("obsel").joinpath("data/default.tmap").read_text(encoding="utf-8")
    return parse_translation_map(text)


# ---------------------------------------------------------------------------
# Translation
# ---------------------------------------------------------------------------


def kinds_in(formulas: Iterable[Formula]) -> set[Kind]:
    return {g.kind for f in formulas for g in f.subterms()}


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_]", "_", name)


class _Renderer:
    def __init__(self, tmap: TranslationMap):
        self.tmap = tmap

    def render(self, f: Formula) -> str:
        k = f.kind
        if k is Kind.IDENT:
            return f.value  # type: ignore[return-value]
        if k is Kind.INT_LIT:
            return str(f.value) if f.value >= 0 else f"({f.value})"  # type: ignore[operator]
        entry = self.tmap.ops.get(k)
        if entry is None:
            raise UnmappedOperator(k)
        if entry.style == "binder":
            names = " ".join(f.bound)
            return f"({entry.symbol} {names} : {self.tmap.universe}. {self.render(f.children[0])})"
        if entry.style == "infix":
            a, b = f.children
            return f"({self.render(a)} {entry.symbol} {self.render(b)})"
        if not f.children:
            return entry.symbol
        return "(" + entry.symbol + " " + " ".join(self.render(c) for c in f.children) + ")"


def translate_sequent(po: ProofObligation, tmap: Optional[TranslationMap] = None) -> str:
    """Render an obligation as theory text; byte-identical for identical inputs.

    Only prelude blocks supporting an operator kind present in the sequent
    are emitted.
    """
    tmap = tmap or default_translation_map()
    formulas = list(po.formulas) + [po.goal]
    present = kinds_in(formulas)
    for k in sorted(present):
        if k not in NATIVE and k not in tmap.ops:
            raise UnmappedOperator(k)
    r = _Renderer(tmap)

    out = [f"theory PO_{_safe(po.id)}"]
    out += [f"  {line}" for line in tmap.header]
    for block in tmap.blocks_for(present):
        out.append(f"  (* prelude: {block.name} *)")
        out += [f"  {line}" if line else "" for line in block.text.splitlines()]
    out.append(f"  type {tmap.universe}")

    declared: list[str] = []
    for s in po.sets:
        out.append(f"  constant {s} : set {tmap.universe}")
        declared.append(s)
    names = list(po.constants) + list(po.parameters) + list(po.variables) + [v + "'" for v in po.variables]
    extra = set()
    for f in formulas:
        extra |= free_identifiers(f)
    names += sorted(extra - set(names) - set(declared))
    for name in names:
        if name not in declared:
            out.append(f"  constant {name} : {tmap.universe}")
            declared.append(name)

    for i, h in enumerate(po.hypotheses, 1):
        out.append(f"  axiom h{i}_{_safe(h.label)}: {r.render(h.formula)}")
    out.append(f"  goal g: {r.render(po.goal)}")
    out.append("end")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# External provers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProverConfig:
    id: str
    command: str
    timeout: float = 2.0
    patterns: tuple[tuple[str, Verdict], ...] = ()
    translation_map: Optional[str] = None

    def __post_init__(self) -> None:
        if "{file}" not in self.command:
            raise ValueError(f"prover {self.id}: command template must contain {{file}}")
        if self.timeout <= 0:
            raise ValueError(f"prover {self.id}: timeout must be positive")
        for pattern, _ in self.patterns:
            re.compile(pattern)

    @classmethod
    def from_json(cls, data: dict, base: Optional[Path] = None) -> "ProverConfig":
        tmap = data.get("translation_map")
        if tmap and base is not None and not Path(tmap).is_absolute():
            tmap = str(base / tmap)
        return cls(
            id=data["id"],
            command=data["command"],
            timeout=float(data.get("timeout", 2.0)),
            patterns=tuple((p, Verdict(v)) for p, v in data.get("patterns", [])),
            translation_map=tmap,
        )

    @classmethod
    def load(cls, path: str | Path) -> "ProverConfig":
        p = Path(path)
        return cls.from_json(json.loads(p.read_text(encoding="utf-8")), p.parent)

    def tmap(self) -> TranslationMap:
        return load_translation_map(self.translation_map) if self.translation_map else default_translation_map()


@dataclass(frozen=True)
class ProverRun:
    verdict: Verdict
    ms: float
    output: str


def classify(output: str, patterns: Sequence[tuple[str, Verdict]]) -> Optional[Verdict]:
    for pattern, verdict in patterns:
        if re.search(pattern, output, re.MULTILINE):
            return verdict
    return None


def run_prover(theory: str, cfg: ProverConfig) -> ProverRun:
    """Run one external prover on ``theory``.

    Spawn failures and output matching no pattern give a ToolError verdict
    with the raw output preserved; expiry of the timeout kills the process.
    """
    with tempfile.TemporaryDirectory(prefix="obsel-") as tmp:
        path = Path(tmp) / "theory.why"
        path.write_text(theory, encoding="utf-8")
        timeout = cfg.timeout
        cmd = cfg.command.replace("{file}", shlex.quote(str(path))).replace("{timeout}", f"{timeout:g}")
        start = time.monotonic()
        try:
            proc = subprocess.run(
                shlex.split(cmd),
                capture_output=True,
                text=True,
                timeout=timeout,
            )
        except subprocess.TimeoutExpired as e:
            ms = (time.monotonic() - start) * 1000
            out = _text(e.stdout) + _text(e.stderr)
            return ProverRun(Verdict.TIMEOUT, ms, out)
        except OSError as e:
            ms = (time.monotonic() - start) * 1000
            return ProverRun(Verdict.TOOL_ERROR, ms, f"cannot start {cmd!r}: {e}")
        ms = (time.monotonic() - start) * 1000
    output = proc.stdout + proc.stderr
    verdict = classify(output, cfg.patterns)
    return ProverRun(verdict if verdict is not None else Verdict.TOOL_ERROR, ms, output)


def _text(data) -> str:
    if data is None:
        return ""
    return data.decode("utf-8", "replace") if isinstance(data, bytes) else data


# ---------------------------------------------------------------------------
# Stub prover
# ---------------------------------------------------------------------------


def _conjuncts(f: Formula) -> list[Formula]:
    if f.kind is Kind.AND:
        return _conjuncts(f.children[0]) + _conjuncts(f.children[1])
    return [f]


def _decompose(h: Formula) -> Optional[tuple[list[str], list[Formula], Formula]]:
    """Split ``!xs. P1 & ... => (!ys. Q => C)`` into (xs+ys, [P1, ..., Q], C)."""
    variables: list[str] = []
    premises: list[Formula] = []
    f = h
    while True:
        if f.kind is Kind.FORALL:
            clash = set(f.bound) & (set(variables) | {n for p in premises for n in free_identifiers(p)})
            if clash:
                return None
            variables += f.bound
            f = f.children[0]
        elif f.kind is Kind.IMPLIES:
            premises += _conjuncts(f.children[0])
            f = f.children[1]
        else:
            break
    if not premises and not variables:
        return None
    return variables, premises, f


def _as_pattern(f: Formula, variables: list[str]) -> Formula:
    return substitute(f, {v: Formula.meta(v) for v in variables})


def _modus_ponens(target: Formula, hyps: Sequence[Formula], normalized: Sequence[Formula]) -> bool:
    for i, h in enumerate(hyps):
        parts = _decompose(h)
        if parts is None:
            continue
        variables, premises, conclusion = parts
        binding = match(_as_pattern(conclusion, variables), target)
        if binding is None:
            continue
        others = [j for j in range(len(hyps)) if j != i]
        pats = [_as_pattern(p, variables) for p in premises]

        def sound(b, variables=variables, premises=premises, conclusion=conclusion) -> bool:
            # redo the instantiation with the capture check on real variables
            inst = {v: b[v] for v in variables if v in b}
            try:
                if substitute(conclusion, inst) != target:
                    return False
                done = [rename_bound(substitute(p, inst)) for p in premises]
            except CaptureError:
                return False
            return all(any(normalized[j] == d for j in others) for d in done)

        if _discharge(pats, binding, hyps, normalized, others, sound):
            return True
    return False


def _discharge(premises, binding, hyps, normalized, others, sound) -> bool:
    if not premises:
        return sound(binding)
    first, rest = premises[0], premises[1:]
    try:
        partial = substitute_meta(first, binding)
    except CaptureError:
        return False
    if not partial.contains_meta():
        norm = rename_bound(partial)
        return any(normalized[j] == norm for j in others) and _discharge(
            rest, binding, hyps, normalized, others, sound
        )
    for j in others:
        extended = match(partial, hyps[j], binding)
        if extended is not None and _discharge(rest, extended, hyps, normalized, others, sound):
            return True
    return False


def stub_prove(po: ProofObligation) -> Verdict:
    """Desk-scale prover with three sound rules.

    (a) the goal is a hypothesis up to bound-variable renaming;
    (b) the goal is the instantiated conclusion of a universally quantified
        implication among the hypotheses whose instantiated premises are
        other hypotheses;
    (c) (a) or (b) after rewriting primed identifiers by their ``x' = E``
        hypotheses.
    """
    hyps = po.formulas
    normalized = [rename_bound(h) for h in hyps]
    targets = [po.goal]
    expanded = expand_primed(po.goal, hyps)
    if expanded is not None:
        targets.append(expanded)
    for t in targets:
        if rename_bound(t) in normalized:
            return Verdict.VALID
        if _modus_ponens(t, hyps, normalized):
            return Verdict.VALID
    return Verdict.UNKNOWN


# ---------------------------------------------------------------------------
# Attempt ledger
# ---------------------------------------------------------------------------

LEDGER_FIELDS = ("ts", "po_id", "po_hash", "prover", "params", "n_hyps", "lemmas", "verdict", "ms")


class MalformedRecord(ValueError):
    def __init__(self, line: int, reason: str):
        self.line = line
        super().__init__(f"ledger line {line}: {reason}")


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds").replace("+00:00", "Z")


@dataclass(frozen=True)
class AttemptRecord:
    po_id: str
    po_hash: int
    prover: str
    verdict: Verdict
    ms: float
    n_hyps: int = 0
    lemmas: tuple[str, ...] = ()
    params: dict = field(default_factory=dict, compare=False)
    ts: str = field(default_factory=utc_now)
    obligation: Optional[str] = None

    def __post_init__(self) -> None:
        if self.ms < 0:
            raise ValueError("duration must be nonnegative")
        object.__setattr__(self, "verdict", Verdict(self.verdict))

    def to_json(self) -> dict:
        data = {
            "ts": self.ts,
            "po_id": self.po_id,
            "po_hash": f"{self.po_hash:016x}",
            "prover": self.prover,
            "params": self.params,
            "n_hyps": self.n_hyps,
            "lemmas": list(self.lemmas),
            "verdict": self.verdict.value,
            "ms": round(self.ms, 3),
        }
        if self.obligation is not None:
            data["obligation"] = self.obligation
        return data

    @classmethod
    def from_json(cls, data: dict) -> "AttemptRecord":
        return cls(
            po_id=data["po_id"],
            po_hash=int(data["po_hash"], 16),
            prover=data["prover"],
            verdict=Verdict(data["verdict"]),
            ms=float(data["ms"]),
            n_hyps=int(data["n_hyps"]),
            lemmas=tuple(data["lemmas"]),
            params=dict(data["params"]),
            ts=data["ts"],
            obligation=data.get("obligation"),
        )


def obfuscate(po: ProofObligation) -> str:
    """Sequent text with identifiers renamed in order of first appearance."""
    aliases: dict[str, str] = {}
    mapping: dict[str, Formula] = {}
    for f in list(po.formulas) + [po.goal]:
        for g in f.subterms():
            names = g.bound if g.kind in QUANTIFIERS else (g.value,) if g.kind is Kind.IDENT else ()
            for name in names:
                # x and x' share one alias so the before/after link survives
                base = name.rstrip("'")  # type: ignore[union-attr]
                alias = aliases.setdefault(base, f"v{len(aliases) + 1}")
                mapping[name] = Formula.ident(alias + name[len(base) :])  # type: ignore[index]

    def hide(f: Formula) -> str:
        return print_formula(_rename_all(f, mapping))

    return "; ".join(hide(h) for h in po.formulas) + " |- " + hide(po.goal)


def _rename_all(f: Formula, mapping: dict[str, Formula]) -> Formula:
    if f.kind is Kind.IDENT:
        return mapping.get(f.value, f)  # type: ignore[arg-type]
    if not f.children:
        return f
    bound = tuple(mapping[b].value if b in mapping else b for b in f.bound)  # type: ignore[misc]
    return Formula(f.kind, tuple(_rename_all(c, mapping) for c in f.children), f.value, bound)


def record_attempt(path: str | Path, record: AttemptRecord) -> None:
    """Append one JSON line; the write is locked, single-shot and fsynced."""
    data = (json.dumps(record.to_json(), separators=(",", ":")) + "\n").encode("utf-8")
    try:
        fd = os.open(path, os.O_WRONLY | os.O_APPEND | os.O_CREAT, 0o644)
    except OSError as e:
        raise OSError(e.errno, e.strerror, str(path)) from e
    try:
        if fcntl is not None:
            fcntl.flock(fd, fcntl.LOCK_EX)
        view = memoryview(data)
        while view:
            written = os.write(fd, view)
            view = view[written:]
        os.fsync(fd)
    except OSError as e:
        raise OSError(e.errno, e.strerror, str(path)) from e
    finally:
        if fcntl is not None:
            fcntl.flock(fd, fcntl.LOCK_UN)
        os.close(fd)


def read_ledger(path: str | Path) -> list[AttemptRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as e:
                raise MalformedRecord(lineno, f"invalid JSON ({e.msg})") from None
            if not isinstance(data, dict):
                raise MalformedRecord(lineno, "record is not an object")
            missing = [k for k in LEDGER_FIELDS if k not in data]
            if missing:
                raise MalformedRecord(lineno, f"missing fields {missing}")
            try:
                records.append(AttemptRecord.from_json(data))
            except (ValueError, TypeError, KeyError) as e:
                raise MalformedRecord(lineno, str(e)) from None
    return records


@dataclass
class Aggregate:
    attempts: int = 0
    valid: int = 0
    verdicts: dict[str, int] = field(default_factory=dict)

    @property
    def success_rate(self) -> float:
        return self.valid / self.attempts if self.attempts else 0.0

    def add(self, rec: AttemptRecord) -> None:
        self.attempts += 1
        self.valid += rec.verdict is Verdict.VALID
        self.verdicts[rec.verdict.value] = self.verdicts.get(rec.verdict.value, 0) + 1

    def to_json(self) -> dict:
        return {
            "attempts": self.attempts,
            "valid": self.valid,
            "success_rate": self.success_rate,
            "verdicts": dict(sorted(self.verdicts.items())),
        }


@dataclass
class LedgerStats:
    by_prover: dict[str, Aggregate]
    by_lemma: dict[str, Aggregate]

    def to_json(self) -> dict:
        return {
            "by_prover": {k: v.to_json() for k, v in self.by_prover.items()},
            "by_lemma": {k: v.to_json() for k, v in self.by_lemma.items()},
        }


def aggregate(records: Iterable[AttemptRecord]) -> LedgerStats:
    by_prover: dict[str, Aggregate] = {}
    by_lemma: dict[str, Aggregate] = {}
    for rec in records:
        by_prover.setdefault(rec.prover, Aggregate()).add(rec)
        for name in sorted(set(rec.lemmas)):
            by_lemma.setdefault(name, Aggregate()).add(rec)
    return LedgerStats(dict(sorted(by_prover.items())), dict(sorted(by_lemma.items())))


def ledger_stats(path: str | Path) -> LedgerStats:
    p = Path(path)
    if not p.exists():
        return LedgerStats({}, {})
    return aggregate(read_ledger(p))
