"""Proof-obligation preparation: generation, premise selection, lemma injection, prover dispatch."""

from obsel.formula import (
    CaptureError,
    Formula,
    Kind,
    ParseError,
    formula_hash,
    free_identifiers,
    parse_formula,
    prime,
    print_formula,
    substitute,
)

__version__ = "0.1.0"

__all__ = [
    "CaptureError",
    "Formula",
    "Kind",
    "ParseError",
    "formula_hash",
    "free_identifiers",
    "parse_formula",
    "prime",
    "print_formula",
    "substitute",
]
