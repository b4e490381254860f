import json
import re
import sys
from concurrent.futures import ProcessPoolExecutor

import pytest
from hypothesis import given, settings, strategies as st

from conftest import DATA, LIBRARY_MACHINE, OVERRIDE_LEMMA
from corpus import invalid_corpus
from obsel.formula import Kind, free_identifiers, parse_formula
from obsel.lemmas import instantiate, parse_lemma
from obsel.machine import Hypothesis, ProofObligation, assemble_sequent, generate_inv_pos, parse_machine
from obsel.prover import (
    AttemptRecord,
    MalformedRecord,
    ProverConfig,
    TranslationError,
    UnmappedOperator,
    Verdict,
    default_translation_map,
    kinds_in,
    ledger_stats,
    obfuscate,
    parse_translation_map,
    read_ledger,
    record_attempt,
    run_prover,
    stub_prove,
    translate_sequent,
)
from strategies import predicates

PY = sys.executable


def library_po():
    [po] = generate_inv_pos(parse_machine(LIBRARY_MACHINE))
    return po


def with_override(po):
    inst = instantiate(parse_lemma(OVERRIDE_LEMMA), {"A": parse_formula("BOOKS"), "B": parse_formula("NAT")})
    return assemble_sequent(po, range(len(po.hypotheses)), [("override_tfun", inst)])


def make_po(hyps, goal, pid="m/e/i/INV"):
    hs = tuple(Hypothesis("axiom", f"h{i}", parse_formula(h, allow_primes=True)) for i, h in enumerate(hyps))
    return ProofObligation(pid, hs, parse_formula(goal, allow_primes=True), "m", "p")


def preludes(theory):
    return re.findall(r"\(\* prelude: (\w+) \*\)", theory)


# --- translation -------------------------------------------------------


def test_library_translation_golden():
    expected = (DATA / "library_inv.theory").read_text(encoding="utf-8")
    assert translate_sequent(library_po()) == expected


def test_translation_is_deterministic():
    po = library_po()
    assert translate_sequent(po).encode() == translate_sequent(po).encode()


def test_library_prelude_blocks():
    blocks = set(preludes(translate_sequent(library_po())))
    assert {"set_membership", "total_function", "override"} <= blocks
    assert "cartesian_product" not in blocks


def test_trivial_goal_pulls_only_arithmetic():
    text = translate_sequent(make_po([], "1 = 1"))
    assert preludes(text) == ["arithmetic"]
    assert "  goal g: (1 = 1)\n" in text
    assert "axiom h" not in text


def test_theory_layout():
    text = translate_sequent(make_po(["x : S"], "x' : S"))
    lines = text.splitlines()
    assert lines[0] == "theory PO_m_e_i_INV" and lines[-1] == "end"
    assert "  constant x : univ" in lines and "  constant x' : univ" in lines
    assert "  axiom h1_h0: (mem x S)" in lines


def test_unmapped_operator():
    tmap = default_translation_map()
    ops = dict(tmap.ops)
    del ops[Kind.OVERRIDE]
    partial = type(tmap)(ops, tmap.blocks, tmap.header, tmap.universe)
    with pytest.raises(UnmappedOperator) as info:
        translate_sequent(library_po(), partial)
    assert info.value.kind is Kind.OVERRIDE


def test_default_map_is_complete():
    assert default_translation_map().missing_kinds() == set()


def test_custom_map_file():
    text = (
        "header use int.Int\n"
        "op Equal -> = infix\n"
        "op Add -> plus prefix\n"
        "block arith supports Add,IntLit\n"
        "  function plus (x y: int) : int = x + y\n"
        "\n"
        "  (* two-line body *)\n"
    )
    tmap = parse_translation_map(text)
    theory = translate_sequent(make_po([], "1 + 2 = 3"), tmap)
    assert "(plus 1 2) = 3" in theory
    assert "  function plus (x y: int) : int = x + y\n\n  (* two-line body *)\n" in theory


@pytest.mark.parametrize(
    "text",
    [
        "op Frobnicate -> f prefix\n",
        "op Add -> + infix\nop Add -> plus prefix\n",
        "op Forall -> forall prefix\n",
        "op Not -> not infix\n",
        "block a supports Add\n  x\nblock a supports Sub\n  y\n",
        "nonsense\n",
    ],
)
def test_bad_map_files(text):
    with pytest.raises(TranslationError):
        parse_translation_map(text)


def _random_po(hyps, goal):
    hs = tuple(Hypothesis("axiom", f"h{i}", h) for i, h in enumerate(hyps))
    return ProofObligation("rnd/e/i/INV", hs, goal, "rnd", "p")


@settings(max_examples=100, deadline=None)
@given(st.lists(predicates(5), max_size=5), predicates(5))
def test_minimal_prelude_on_random_obligations(hyps, goal):
    tmap = default_translation_map()
    po = _random_po(hyps, goal)
    present = kinds_in(list(po.formulas) + [po.goal])
    expected = {b.name for b in tmap.blocks if b.supports & present}
    emitted = preludes(translate_sequent(po, tmap))
    assert len(emitted) == len(set(emitted))
    assert set(emitted) == expected


# --- external provers --------------------------------------------------


def test_catch_all_pattern():
    cfg = ProverConfig("true", "true {file}", 2.0, ((r"", Verdict.UNKNOWN),))
    assert run_prover("theory T end\n", cfg).verdict is Verdict.UNKNOWN


def test_unmatched_output_is_tool_error():
    cfg = ProverConfig("echo", f"{PY} -c \"print('mystery')\" {{file}}", 2.0, ((r"^Valid", Verdict.VALID),))
    run = run_prover("x", cfg)
    assert run.verdict is Verdict.TOOL_ERROR and "mystery" in run.output


def test_spawn_failure_is_tool_error():
    cfg = ProverConfig("none", "/nonexistent/prover {file}", 1.0, ((r"", Verdict.UNKNOWN),))
    assert run_prover("x", cfg).verdict is Verdict.TOOL_ERROR


def test_timeout_kills_prover():
    cfg = ProverConfig("sleepy", "sh -c 'sleep 10' {file}", 1.0, ((r"", Verdict.UNKNOWN),))
    run = run_prover("x", cfg)
    assert run.verdict is Verdict.TIMEOUT
    assert abs(run.ms - 1000) <= 500


def test_mock_prover_reads_theory(tmp_path):
    script = tmp_path / "mock.py"
    script.write_text(
        "import sys\n"
        "text = open(sys.argv[1]).read()\n"
        "print('Valid' if 'goal g:' in text else 'Unknown', sys.argv[2])\n"
    )
    cfg = ProverConfig(
        "mock",
        f"{PY} {script} {{file}} {{timeout}}",
        3.0,
        ((r"^Valid", Verdict.VALID), (r"^Unknown", Verdict.UNKNOWN)),
    )
    run = run_prover(translate_sequent(library_po()), cfg)
    assert run.verdict is Verdict.VALID and run.output.strip() == "Valid 3"


def test_prover_config_file(tmp_path):
    path = tmp_path / "p.json"
    path.write_text(json.dumps({"id": "x", "command": "true {file}", "timeout": 1, "patterns": [["", "Unknown"]]}))
    cfg = ProverConfig.load(path)
    assert cfg.patterns == (("", Verdict.UNKNOWN),) and cfg.timeout == 1.0
    with pytest.raises(ValueError):
        ProverConfig("bad", "true", 1.0)


# --- stub prover -------------------------------------------------------


def test_stub_rule_a():
    assert stub_prove(make_po(["x : NAT"], "x : NAT")) is Verdict.VALID
    assert stub_prove(make_po(["!y. y : S"], "!z. z : S")) is Verdict.VALID


def test_stub_library_with_lemma():
    assert stub_prove(with_override(library_po())) is Verdict.VALID


def test_stub_library_without_lemma():
    assert stub_prove(library_po()) is Verdict.UNKNOWN


def test_stub_needs_every_premise():
    po = with_override(library_po())
    for drop in ("inv1", "grd1", "grd2", "act1"):
        kept = [i for i, h in enumerate(po.hypotheses) if h.label != drop]
        assert stub_prove(assemble_sequent(po, kept, [])) is Verdict.UNKNOWN, drop


def test_stub_modus_ponens():
    assert stub_prove(make_po(["!x. x : S => f(x) : T", "a : S"], "f(a) : T")) is Verdict.VALID
    assert stub_prove(make_po(["!x. x : S => f(x) : T", "b : S"], "f(a) : T")) is Verdict.UNKNOWN


def test_stub_rejects_captured_instances():
    assert stub_prove(make_po(["!v. (!y. y : v)"], "!y. y : y")) is Verdict.UNKNOWN


def test_stub_rewrites_primed_definitions():
    assert stub_prove(make_po(["x : NAT", "x' = x"], "x' : NAT")) is Verdict.VALID


def test_stub_soundness_corpus():
    corpus = invalid_corpus(50)
    assert len(corpus) == 50
    for po in corpus:
        assert stub_prove(po) is Verdict.UNKNOWN, po.id
    fresh = [po for po in corpus if "/fresh/" in po.id]
    for po in fresh:
        mentioned = set().union(*(free_identifiers(h) for h in po.formulas))
        assert free_identifiers(po.goal) - mentioned


# --- ledger ------------------------------------------------------------


def record(**kw):
    base = dict(po_id="m/e/i/INV", po_hash=0xABCDEF, prover="stub", verdict=Verdict.VALID, ms=1.5)
    base.update(kw)
    return AttemptRecord(**base)


def test_record_round_trip(tmp_path):
    path = tmp_path / "ledger.jsonl"
    rec = record(lemmas=("override_tfun",), params={"c": 1.0}, n_hyps=5)
    record_attempt(path, rec)
    [back] = read_ledger(path)
    assert back == rec and back.params == rec.params and back.ts == rec.ts
    line = json.loads(path.read_text())
    assert list(line) == ["ts", "po_id", "po_hash", "prover", "params", "n_hyps", "lemmas", "verdict", "ms"]
    assert line["po_hash"] == "0000000000abcdef"
    assert re.fullmatch(r"\d{4}-\d\d-\d\dT\d\d:\d\d:\d\d\.\d{3}Z", line["ts"])


def test_record_io_error_names_path(tmp_path):
    bad = tmp_path / "missing" / "ledger.jsonl"
    with pytest.raises(OSError) as info:
        record_attempt(bad, record())
    assert str(bad) in str(info.value)


def _append_many(args):
    path, writer, count = args
    for i in range(count):
        record_attempt(path, record(po_id=f"w{writer}/e/i/INV", po_hash=writer * 1000 + i, lemmas=("x" * 200,)))
    return count


def test_concurrent_appenders(tmp_path):
    path = tmp_path / "ledger.jsonl"
    with ProcessPoolExecutor(max_workers=8) as pool:
        assert sum(pool.map(_append_many, [(str(path), w, 100) for w in range(8)])) == 800
    lines = path.read_text().splitlines()
    assert len(lines) == 800
    records = read_ledger(path)
    assert sorted(r.po_hash for r in records) == sorted(w * 1000 + i for w in range(8) for i in range(100))


def test_stats_on_three_records(tmp_path):
    path = tmp_path / "l.jsonl"
    for v in (Verdict.VALID, Verdict.VALID, Verdict.TIMEOUT):
        record_attempt(path, record(verdict=v))
    stats = ledger_stats(path)
    assert stats.by_prover["stub"].success_rate == pytest.approx(2 / 3)


def test_stats_on_fixture():
    stats = ledger_stats(DATA / "ledger10.jsonl").to_json()
    assert stats["by_prover"] == {
        "alt-ergo": {"attempts": 3, "valid": 2, "success_rate": 2 / 3, "verdicts": {"Invalid": 1, "Valid": 2}},
        "stub": {"attempts": 3, "valid": 2, "success_rate": 2 / 3, "verdicts": {"Unknown": 1, "Valid": 2}},
        "z3": {
            "attempts": 4,
            "valid": 1,
            "success_rate": 0.25,
            "verdicts": {"Timeout": 1, "ToolError": 1, "Unknown": 1, "Valid": 1},
        },
    }
    assert stats["by_lemma"] == {
        "override_tfun": {"attempts": 4, "valid": 3, "success_rate": 0.75, "verdicts": {"Timeout": 1, "Valid": 3}},
        "tfun_dom": {
            "attempts": 4,
            "valid": 2,
            "success_rate": 0.5,
            "verdicts": {"ToolError": 1, "Unknown": 1, "Valid": 2},
        },
    }


def test_stats_are_order_insensitive(tmp_path):
    lines = (DATA / "ledger10.jsonl").read_text().splitlines()
    path = tmp_path / "rev.jsonl"
    path.write_text("\n".join(reversed(lines)) + "\n")
    assert ledger_stats(path).to_json() == ledger_stats(DATA / "ledger10.jsonl").to_json()


def test_empty_and_missing_ledgers(tmp_path):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    for p in (empty, tmp_path / "absent.jsonl"):
        stats = ledger_stats(p)
        assert stats.by_prover == {} and stats.by_lemma == {}


@pytest.mark.parametrize(
    "mutate, line",
    [
        (lambda r: r.update(verdict="Proved"), 2),
        (lambda r: r.pop("ms"), 2),
        (lambda r: r.update(po_hash="zz"), 2),
        (lambda r: r.update(ms=-1), 2),
    ],
)
def test_malformed_records(tmp_path, mutate, line):
    good = json.dumps(record().to_json())
    bad = record().to_json()
    mutate(bad)
    path = tmp_path / "l.jsonl"
    path.write_text(good + "\n" + json.dumps(bad) + "\n")
    with pytest.raises(MalformedRecord) as info:
        ledger_stats(path)
    assert info.value.line == line


def test_truncated_line(tmp_path):
    path = tmp_path / "l.jsonl"
    path.write_text(json.dumps(record().to_json())[:40] + "\n")
    with pytest.raises(MalformedRecord):
        read_ledger(path)


def test_obfuscation_hides_identifiers():
    po = library_po()
    text = obfuscate(po)
    for name in ("library", "BOOKS", "b", "n"):
        assert not re.search(rf"\b{name}\b", text)
    assert text == "v1 : v2 --> NAT; v3 : v2; v4 : NAT; v1' = v1 <+ {v3 |-> v4} |- v1' : v2 --> NAT"
    assert obfuscate(po) == text
