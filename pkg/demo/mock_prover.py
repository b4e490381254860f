"""Toy external prover for trying the dispatch path without installing one.

Usage: mock_prover.py THEORY_FILE [TIMEOUT]

Prints "Valid" when the goal text appears verbatim as an axiom, else "Unknown".
"""

import sys


def main() -> int:
    text = open(sys.argv[1], encoding="utf-8").read()
    axioms, goal = set(), None
    for line in text.splitlines():
        line = line.strip()
        if line.startswith("axiom "):
            axioms.add(line.split(":", 1)[1].strip())
        elif line.startswith("goal g:"):
            goal = line.split(":", 1)[1].strip()
    print("Valid" if goal in axioms else "Unknown")
    return 0


if __name__ == "__main__":
    sys.exit(main())
