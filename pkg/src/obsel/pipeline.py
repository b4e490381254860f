"""End-to-end flow: model -> obligations -> selection -> lemma injection -> provers -> ledger."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from obsel.lemmas import LemmaStore, lemmas_in_scope, suggest_lemmas
from obsel.machine import ProofObligation, assemble_sequent, format_po, generate_inv_pos, load_machine
from obsel.prover import (
    AttemptRecord,
    ProverConfig,
    Verdict,
    obfuscate,
    record_attempt,
    run_prover,
    stub_prove,
    translate_sequent,
)
from obsel.similarity import ScoreParams, select

log = logging.getLogger(__name__)

STUB = "stub"


@dataclass(frozen=True)
class PipelineConfig:
    machine: Path
    store: Optional[Path] = None
    params: ScoreParams = field(default_factory=ScoreParams)
    provers: tuple[ProverConfig, ...] = ()
    stub: bool = False
    ledger: Optional[Path] = None
    out_dir: Optional[Path] = None
    obfuscate: bool = False
    json: bool = False
    jobs: int = 1

    def __post_init__(self) -> None:
        if not str(self.machine):
            raise ValueError("machine path is empty")
        if not self.stub and not self.provers:
            raise ValueError("configure at least one prover or use stub mode")
        if self.jobs < 1:
            raise ValueError("jobs must be at least 1")


@dataclass(frozen=True)
class PoResult:
    po_id: str
    verdict: Verdict
    prover: Optional[str]
    lemmas: tuple[str, ...]
    ms: float
    error: Optional[str] = None
    records: tuple[AttemptRecord, ...] = ()

    def to_json(self) -> dict:
        data = {
            "po_id": self.po_id,
            "verdict": self.verdict.value,
            "prover": self.prover,
            "lemmas": list(self.lemmas),
            "ms": round(self.ms, 3),
        }
        if self.error:
            data["error"] = self.error
        return data


@dataclass(frozen=True)
class PipelineSummary:
    results: tuple[PoResult, ...]
    ledger_lines: int

    @property
    def failed(self) -> bool:
        return any(r.error is not None for r in self.results)

    def to_json(self) -> list[dict]:
        return [r.to_json() for r in self.results]


def prepare(
    po: ProofObligation, store: Optional[LemmaStore], params: ScoreParams
) -> tuple[ProofObligation, tuple[str, ...]]:
    """Filter hypotheses and append instantiated in-scope lemmas."""
    scoped = lemmas_in_scope(store, po.machine, po.project) if store else []
    selection = select(po.goal, po.formulas, [l.statement for l in scoped], params)
    picked = sorted(c.index for c in selection if c.source == "lemma")
    suggestions = suggest_lemmas(po.goal, po.formulas, [scoped[i] for i in picked], params)
    injected = [(s.lemma.name, s.formula) for s in suggestions]
    names = tuple(dict.fromkeys(name for name, _ in injected))
    return assemble_sequent(po, selection, injected), names


def prove_obligation(
    po: ProofObligation,
    store: Optional[LemmaStore],
    params: ScoreParams,
    provers: Sequence[ProverConfig] = (),
    stub: bool = False,
    hide: bool = False,
    out_dir: Optional[Path] = None,
) -> PoResult:
    """Prepare one obligation, then attempt it."""
    try:
        sequent, lemma_names = prepare(po, store, params)
    except Exception as e:
        log.exception("preparing %s failed", po.id)
        return PoResult(po.id, Verdict.TOOL_ERROR, None, (), 0.0, error=str(e))
    return attempt(sequent, lemma_names, params, provers, stub, hide, out_dir)


def attempt(
    sequent: ProofObligation,
    lemma_names: tuple[str, ...],
    params: ScoreParams,
    provers: Sequence[ProverConfig] = (),
    stub: bool = False,
    hide: bool = False,
    out_dir: Optional[Path] = None,
) -> PoResult:
    """Try the stub (if enabled) and then each prover in order until the first Valid."""
    start = time.monotonic()
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / sequent.file_name()).write_text(format_po(sequent), encoding="utf-8")

    def record(prover: str, verdict: Verdict, ms: float) -> AttemptRecord:
        return AttemptRecord(
            po_id=sequent.id,
            po_hash=sequent.hash,
            prover=prover,
            verdict=verdict,
            ms=ms,
            n_hyps=len(sequent.hypotheses),
            lemmas=lemma_names,
            params=params.to_json(),
            obligation=obfuscate(sequent) if hide else None,
        )

    records: list[AttemptRecord] = []
    verdict, used = Verdict.UNKNOWN, None
    try:
        if stub:
            t0 = time.monotonic()
            verdict = stub_prove(sequent)
            used = STUB
            records.append(record(STUB, verdict, (time.monotonic() - t0) * 1000))
        for cfg in provers:
            if verdict is Verdict.VALID:
                break
            theory = translate_sequent(sequent, cfg.tmap())
            if out_dir is not None:
                (out_dir / f"{sequent.file_name()[:-3]}.{cfg.id}.why").write_text(theory, encoding="utf-8")
            run = run_prover(theory, cfg)
            verdict, used = run.verdict, cfg.id
            records.append(record(cfg.id, run.verdict, run.ms))
    except Exception as e:
        log.exception("proving %s failed", sequent.id)
        return PoResult(sequent.id, Verdict.TOOL_ERROR, used, lemma_names, 0.0, error=str(e), records=tuple(records))
    ms = (time.monotonic() - start) * 1000
    return PoResult(sequent.id, verdict, used, lemma_names, ms, records=tuple(records))


def run_pipeline(cfg: PipelineConfig) -> PipelineSummary:
    model = load_machine(cfg.machine)
    store = LemmaStore.load(cfg.store) if cfg.store else None
    pos = generate_inv_pos(model)

    def work(po: ProofObligation) -> PoResult:
        return prove_obligation(po, store, cfg.params, cfg.provers, cfg.stub, cfg.obfuscate, cfg.out_dir)

    if cfg.jobs == 1:
        results = [work(po) for po in pos]
    else:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(work, pos))
    results.sort(key=lambda r: r.po_id)

    lines = 0
    if cfg.ledger is not None:
        for r in results:
            for rec in r.records:
                record_attempt(cfg.ledger, rec)
                lines += 1
    return PipelineSummary(tuple(results), lines)
