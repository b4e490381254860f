import pytest
from hypothesis import given, settings, strategies as st

from obsel.formula import ParseError, free_identifiers, parse_formula, print_formula
from obsel.lemmas import instantiate, parse_lemma
from obsel.machine import (
    DuplicateName,
    UndeclaredIdentifier,
    assemble_sequent,
    format_po,
    generate_inv_pos,
    load_po,
    parse_machine,
    parse_po,
)
from obsel.prover import Verdict, stub_prove
from obsel.similarity import RankedCandidate
from conftest import LIBRARY_MACHINE, OVERRIDE_LEMMA

COUNTER = """\
machine counter project demo
constants cap
axioms
  @ax1 cap : NAT
variables n total
invariants
  @inv1 n : NAT
  @inv2 n <= cap
  @inv3 total : NAT
events
  event inc where
    @grd1 n < cap
  then
    @act1 n := n + 1
  end
  event reset begin
    @act1 n :| n' = 0
    @act2 total := total + n
  end
  event idle
  end
"""


def hyp_lines(po):
    return [(h.origin, h.label, print_formula(h.formula)) for h in po.hypotheses]


# --- parsing -----------------------------------------------------------


def test_library_machine(library_text):
    m = parse_machine(library_text)
    assert (m.name, m.project) == ("lib0", "demo")
    assert m.sets == ("BOOKS",) and m.variables == ("library",)
    assert len(m.invariants) == 1 and len(m.events) == 1
    ev = m.events[0]
    assert ev.parameters == ("b", "n") and [g.label for g in ev.guards] == ["grd1", "grd2"]
    assert ev.actions[0].variable == "library" and ev.actions[0].kind == ":="


def test_zero_events_gives_no_obligations():
    m = parse_machine("machine m\nvariables x\ninvariants\n  @i x : NAT\nevents\n")
    assert m.events == () and generate_inv_pos(m) == []


def test_undeclared_assignment():
    text = "machine m\nvariables x\nevents\n  event e then\n    @a y := 1\n  end\n"
    with pytest.raises(UndeclaredIdentifier):
        parse_machine(text)


def test_undeclared_identifier_in_invariant():
    with pytest.raises(UndeclaredIdentifier):
        parse_machine("machine m\nvariables x\ninvariants\n  @i x : S\n")


def test_axioms_cannot_mention_variables():
    with pytest.raises(UndeclaredIdentifier):
        parse_machine("machine m\nvariables x\naxioms\n  @a x = 1\n")


@pytest.mark.parametrize(
    "text",
    [
        "machine m\nvariables x x\n",
        "machine m\nsets S\nconstants S\n",
        "machine m\nvariables x\ninvariants\n  @i x = 1\n  @i x = 2\n",
        "machine m\nvariables x\nevents\n  event e then\n    @a x := 1\n    @b x := 2\n  end\n",
        "machine m\nvariables x\nevents\n  event e any x then\n  end\n",
        "machine m\nevents\n  event e\n  end\n  event e\n  end\n",
    ],
)
def test_duplicate_names(text):
    with pytest.raises(DuplicateName):
        parse_machine(text)


def test_source_primes_rejected():
    with pytest.raises(ParseError):
        parse_machine("machine m\nvariables x\ninvariants\n  @i x' = 1\n")


def test_formula_error_span_points_into_file():
    text = "machine m\nvariables x\ninvariants\n  @i x = = 1\n"
    with pytest.raises(ParseError) as info:
        parse_machine(text)
    start = info.value.span.start
    assert text.encode()[start : start + 1] == b"="
    assert start > text.index("@i")


@pytest.mark.parametrize(
    "text",
    ["", "model m\n", "machine m\nfoo\n", "machine m\nevents\n  event e then\n    @a x := 1\n"],
)
def test_malformed_machine(text):
    with pytest.raises((ParseError, UndeclaredIdentifier)):
        parse_machine(text)


def test_comments_and_continuations():
    text = "machine m // demo\nvariables x\ninvariants\n  @i x : NAT &\n     x < 10 // bound\n"
    m = parse_machine(text)
    assert print_formula(m.invariants[0].formula) == "x : NAT & x < 10"


# --- obligations -------------------------------------------------------


def test_library_obligation(library_text):
    [po] = generate_inv_pos(parse_machine(library_text))
    assert po.id == "lib0/lend/inv1/INV"
    assert print_formula(po.goal) == "library' : BOOKS --> NAT"
    assert hyp_lines(po) == [
        ("invariant", "inv1", "library : BOOKS --> NAT"),
        ("guard", "grd1", "b : BOOKS"),
        ("guard", "grd2", "n : NAT"),
        ("BA", "act1", "library' = library <+ {b |-> n}"),
    ]
    assert (po.machine, po.project, po.parameters) == ("lib0", "demo", ("b", "n"))


def test_obligation_count_and_order():
    m = parse_machine(COUNTER)
    pos = generate_inv_pos(m)
    assert len(pos) == len(m.events) * len(m.invariants)
    assert [p.id for p in pos] == sorted(p.id for p in pos)


def test_becomes_such_that_and_frames():
    pos = {p.id: p for p in generate_inv_pos(parse_machine(COUNTER))}
    reset = pos["counter/reset/inv1/INV"]
    assert ("BA", "act1", "n' = 0") in hyp_lines(reset)
    assert ("BA", "act2", "total' = total+n") in hyp_lines(reset)
    assert not [h for h in reset.hypotheses if h.origin == "frame"]
    inc = pos["counter/inc/inv3/INV"]
    assert ("frame", "total", "total' = total") in hyp_lines(inc)
    assert print_formula(inc.goal) == "total' : NAT"


def test_obligation_identifier_discipline():
    m = parse_machine(COUNTER)
    declared = set(m.sets) | set(m.constants)
    for po in generate_inv_pos(m):
        primed = {i for f in po.formulas + (po.goal,) for i in free_identifiers(f) if i.endswith("'")}
        assert {p[:-1] for p in primed} <= set(m.variables)
        unprimed_goal = {i for i in free_identifiers(po.goal) if not i.endswith("'")}
        assert unprimed_goal <= declared | set(po.parameters)


def test_skip_event_is_discharged_by_frames():
    m = parse_machine(COUNTER)
    idle = [p for p in generate_inv_pos(m) if p.event == "idle"]
    assert len(idle) == 3
    for po in idle:
        assert {h.origin for h in po.hypotheses} == {"axiom", "invariant", "frame"}
        assert stub_prove(po) is Verdict.VALID


def test_hashes_are_stable(library_text):
    first = [p.hash for p in generate_inv_pos(parse_machine(library_text))]
    second = [p.hash for p in generate_inv_pos(parse_machine(library_text))]
    assert first == second and all(first)
    other = generate_inv_pos(parse_machine(library_text.replace("{b |-> n}", "{n |-> b}")))
    assert other[0].hash != first[0]


def test_po_file_round_trip(library_text, tmp_path):
    for po in generate_inv_pos(parse_machine(COUNTER)) + generate_inv_pos(parse_machine(library_text)):
        text = format_po(po)
        again = parse_po(text)
        assert again == po and again.hash == po.hash
        path = tmp_path / po.file_name()
        path.write_text(text)
        assert load_po(path) == po


# --- sequent assembly --------------------------------------------------


def test_assemble_select_all_is_identity(library_text):
    [po] = generate_inv_pos(parse_machine(library_text))
    same = assemble_sequent(po, range(len(po.hypotheses)), [])
    assert same.hypotheses == po.hypotheses and same.hash == po.hash


def test_assemble_with_override_lemma(library_text):
    [po] = generate_inv_pos(parse_machine(library_text))
    lem = parse_lemma(OVERRIDE_LEMMA)
    inst = instantiate(lem, {"A": parse_formula("BOOKS"), "B": parse_formula("NAT")})
    full = assemble_sequent(po, range(len(po.hypotheses)), [("override_tfun", inst)])
    assert full.hypotheses[-1].origin == "lemma" and full.hypotheses[-1].label == "override_tfun"
    assert print_formula(full.hypotheses[-1].formula).startswith("!f. f : BOOKS --> NAT =>")
    assert full.id == po.id and full.goal == po.goal and full.hash != po.hash


def test_assemble_empty_selection_plus_lemma(library_text):
    [po] = generate_inv_pos(parse_machine(library_text))
    got = assemble_sequent(po, [], [parse_formula("1 = 1")])
    assert len(got.hypotheses) == 1


def test_assemble_accepts_ranked_candidates(library_text):
    [po] = generate_inv_pos(parse_machine(library_text))
    sel = [RankedCandidate(3, "hyp", 1.0, "Structural"), RankedCandidate(0, "lemma", 2.0, "Structural")]
    got = assemble_sequent(po, sel, [])
    assert [h.label for h in got.hypotheses] == ["act1"]


def test_assemble_index_out_of_range(library_text):
    [po] = generate_inv_pos(parse_machine(library_text))
    with pytest.raises(IndexError):
        assemble_sequent(po, [7], [])


@settings(max_examples=50, deadline=None)
@given(st.sets(st.integers(0, 3)))
def test_assemble_keeps_original_order(chosen):
    [po] = generate_inv_pos(parse_machine(LIBRARY_MACHINE))
    got = assemble_sequent(po, sorted(chosen, reverse=True), [])
    assert got.hypotheses == tuple(h for i, h in enumerate(po.hypotheses) if i in chosen)
