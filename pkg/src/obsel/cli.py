"""Command-line entry point: ``obsel <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from obsel.formula import Formula, FormulaError, parse_formula, print_formula
from obsel.lemmas import LemmaError, LemmaStore, lemmas_in_scope, suggest_lemmas
from obsel.machine import ModelError, assemble_sequent, format_po, generate_inv_pos, load_machine, load_po
from obsel.pipeline import PipelineConfig, attempt, prove_obligation, run_pipeline
from obsel.prover import (
    MalformedRecord,
    ProverConfig,
    TranslationError,
    Verdict,
    default_translation_map,
    ledger_stats,
    load_translation_map,
    record_attempt,
    translate_sequent,
)
from obsel.shingles import profile
from obsel.similarity import ScoreParams, select

EXIT_OK, EXIT_ERROR, EXIT_UNPROVED = 0, 1, 2


def _read(path: str) -> str:
    return Path(path).read_text(encoding="utf-8")


def _formula_file(path: str) -> Formula:
    return parse_formula(_read(path).strip(), allow_primes=True)


def _formula_lines(path: str) -> list[Formula]:
    out = []
    for line in _read(path).splitlines():
        if line.strip() and not line.lstrip().startswith("#"):
            out.append(parse_formula(line.strip(), allow_primes=True))
    return out


def _params(args: argparse.Namespace) -> ScoreParams:
    return ScoreParams(
        c=args.c, n=args.n, tau=args.tau, k=args.k, theta=args.theta, top=args.top, depth=args.depth
    )


def _emit(data, as_json: bool, text: str) -> None:
    if as_json:
        print(json.dumps(data, indent=2))
    else:
        print(text)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_shingle(args: argparse.Namespace) -> int:
    p = profile(_formula_file(args.file), args.n)
    data = p.to_json()
    lines = []
    for kind in ("depth", "structure"):
        for row in data[kind]:
            lines.append(f"{kind}\t[{', '.join(row['labels'])}]\t{row['count']}")
    _emit(data, args.json, "\n".join(lines))
    return EXIT_OK


def cmd_select(args: argparse.Namespace) -> int:
    goal = _formula_file(args.goal)
    hyps = _formula_lines(args.hyps)
    bodies = []
    if args.lemmas:
        bodies = [l.statement for l in LemmaStore.load(args.lemmas).lemmas]
    ranked = select(goal, hyps, bodies, _params(args))
    rows = [c.to_json() for c in ranked]
    text = "\n".join(f"{r['source']}\t{r['index']}\t{r['score']:.6g}\t{r['via']}" for r in rows)
    _emit(rows, args.json, text)
    return EXIT_OK


def cmd_lemma(args: argparse.Namespace) -> int:
    store = LemmaStore.load(args.store)
    if args.action == "list":
        rows = [{"name": l.name, "scope": str(l.scope), "params": list(l.params)} for l in store.lemmas]
        text = "\n".join(f"{r['name']}\t{r['scope']}\t{' '.join(r['params'])}" for r in rows)
        _emit(rows, args.json, text)
        return EXIT_OK
    if args.action == "check":
        # loading already validated every file
        print(f"{len(store)} lemma(s) ok")
        return EXIT_OK
    if not args.goal:
        print("lemma match needs --goal", file=sys.stderr)
        return EXIT_ERROR
    if args.goal.endswith(".po"):
        po = load_po(args.goal)
        goal, hyps = po.goal, list(po.formulas)
        machine, project = args.machine or po.machine, args.project or po.project
    else:
        goal, hyps = _formula_file(args.goal), []
        machine, project = args.machine or "", args.project or ""
    scoped = lemmas_in_scope(store, machine, project)
    rows = []
    for s in suggest_lemmas(goal, hyps, scoped, _params(args)):
        rows.append(
            {
                "lemma": s.lemma.name,
                "binding": {k: print_formula(v) for k, v in sorted(s.binding.items())},
                "instance": print_formula(s.formula),
                "score": s.score,
            }
        )
    _emit(rows, args.json, "\n".join(f"{r['lemma']}\t{r['score']:.6g}\t{r['instance']}" for r in rows))
    return EXIT_OK


def cmd_po_gen(args: argparse.Namespace) -> int:
    pos = generate_inv_pos(load_machine(args.machine))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for po in pos:
            (out / po.file_name()).write_text(format_po(po), encoding="utf-8")
    if args.json:
        rows = [
            {
                "id": po.id,
                "hash": f"{po.hash:016x}",
                "hypotheses": [
                    {"origin": h.origin, "label": h.label, "formula": print_formula(h.formula)}
                    for h in po.hypotheses
                ],
                "goal": print_formula(po.goal),
            }
            for po in pos
        ]
        print(json.dumps(rows, indent=2))
    elif not args.out:
        print("\n".join(format_po(po) for po in pos), end="")
    else:
        print(f"wrote {len(pos)} obligation(s) to {args.out}")
    return EXIT_OK


def cmd_translate(args: argparse.Namespace) -> int:
    tmap = load_translation_map(args.map) if args.map else default_translation_map()
    sys.stdout.write(translate_sequent(load_po(args.po), tmap))
    return EXIT_OK


def cmd_prove(args: argparse.Namespace) -> int:
    po = load_po(args.po)
    store = LemmaStore.load(args.store) if args.store else None
    params = _params(args)
    provers = [ProverConfig.load(args.prover)] if args.prover else []
    if args.select:
        result = prove_obligation(po, store, params, provers, args.stub, args.obfuscate)
    else:
        # no filtering: keep every hypothesis, inject every matching in-scope lemma
        scoped = lemmas_in_scope(store, po.machine, po.project) if store else []
        injected = [(s.lemma.name, s.formula) for s in suggest_lemmas(po.goal, po.formulas, scoped, params)]
        full = assemble_sequent(po, range(len(po.hypotheses)), injected)
        names = tuple(dict.fromkeys(n for n, _ in injected))
        result = attempt(full, names, params, provers, args.stub, args.obfuscate)
    if args.ledger:
        for rec in result.records:
            record_attempt(args.ledger, rec)
    _emit(result.to_json(), args.json, f"{result.po_id}\t{result.verdict.value}\t{result.prover or '-'}")
    if result.error:
        print(result.error, file=sys.stderr)
        return EXIT_ERROR
    if result.verdict is Verdict.VALID:
        return EXIT_OK
    if result.verdict is Verdict.TOOL_ERROR:
        return EXIT_ERROR
    return EXIT_UNPROVED


def cmd_run(args: argparse.Namespace) -> int:
    provers = tuple(ProverConfig.load(p) for p in args.provers.split(",")) if args.provers else ()
    cfg = PipelineConfig(
        machine=Path(args.machine),
        store=Path(args.store) if args.store else None,
        params=_params(args),
        provers=provers,
        stub=args.stub,
        ledger=Path(args.ledger) if args.ledger else None,
        out_dir=Path(args.out) if args.out else None,
        obfuscate=args.obfuscate,
        json=args.json,
        jobs=args.jobs,
    )
    summary = run_pipeline(cfg)
    text = "\n".join(
        f"{r.po_id}\t{r.verdict.value}\t{r.prover or '-'}\t{','.join(r.lemmas) or '-'}" for r in summary.results
    )
    _emit(summary.to_json(), args.json, text)
    return EXIT_ERROR if summary.failed else EXIT_OK


def cmd_ledger(args: argparse.Namespace) -> int:
    stats = ledger_stats(args.file)
    data = stats.to_json()
    lines = []
    for group in ("by_prover", "by_lemma"):
        for key, agg in data[group].items():
            lines.append(f"{group[3:]}\t{key}\t{agg['valid']}/{agg['attempts']}\t{agg['success_rate']:.3f}")
    _emit(data, args.json, "\n".join(lines))
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _score_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--c", type=float, default=1.0, help="structure-term coefficient")
    p.add_argument("--n", type=int, default=3, help="shingle size (2-5)")
    p.add_argument("--top", type=int, default=50, help="max structurally selected candidates")
    p.add_argument("--theta", type=float, default=0.0, help="minimum structural score")
    p.add_argument("--depth", type=int, default=1, help="free-identifier closure rounds")
    p.add_argument("--tau", type=float, default=1000, help="prune shingles occurring more often than this")
    p.add_argument("--k", type=float, default=64, help="max shingles per kind used when scoring")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="obsel", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("shingle", help="print the shingle profile of a formula")
    p.add_argument("file")
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_shingle)

    p = sub.add_parser("select", help="rank hypotheses and lemma bodies against a goal")
    p.add_argument("--goal", required=True)
    p.add_argument("--hyps", required=True, help="file with one formula per line")
    p.add_argument("--lemmas", help="lemma store directory")
    _score_flags(p)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("lemma", help="inspect a lemma store")
    p.add_argument("action", choices=["list", "check", "match"])
    p.add_argument("--store", required=True)
    p.add_argument("--goal", help="formula file or .po file (match only)")
    p.add_argument("--machine")
    p.add_argument("--project")
    _score_flags(p)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_lemma)

    p = sub.add_parser("po", help="proof obligations")
    po_sub = p.add_subparsers(dest="po_command", required=True)
    g = po_sub.add_parser("gen", help="generate invariant-preservation obligations")
    g.add_argument("machine")
    g.add_argument("--out")
    g.add_argument("--json", action="store_true")
    g.set_defaults(func=cmd_po_gen)

    p = sub.add_parser("translate", help="print the theory text of an obligation")
    p.add_argument("po")
    p.add_argument("--map", help="translation map file")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("prove", help="prove one obligation")
    p.add_argument("po")
    who = p.add_mutually_exclusive_group(required=True)
    who.add_argument("--prover", help="prover config (JSON)")
    who.add_argument("--stub", action="store_true", help="use the built-in stub prover")
    p.add_argument("--store")
    p.add_argument("--select", action="store_true", help="filter hypotheses before proving")
    p.add_argument("--ledger")
    p.add_argument("--obfuscate", action="store_true", help="record identifier-renamed sequent text")
    _score_flags(p)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_prove)

    p = sub.add_parser("run", help="full pipeline over a machine")
    p.add_argument("--machine", required=True)
    p.add_argument("--store")
    who = p.add_mutually_exclusive_group(required=True)
    who.add_argument("--stub", action="store_true")
    who.add_argument("--provers", help="comma-separated prover configs")
    p.add_argument("--ledger")
    p.add_argument("--out")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--obfuscate", action="store_true")
    _score_flags(p)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ledger", help="attempt ledger")
    l_sub = p.add_subparsers(dest="ledger_command", required=True)
    s = l_sub.add_parser("stats", help="aggregate success rates")
    s.add_argument("file")
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_ledger)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (FormulaError, ModelError, LemmaError, TranslationError, MalformedRecord, OSError, ValueError) as e:
        print(f"obsel: error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
