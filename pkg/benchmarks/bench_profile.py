"""Compare the compiled and pure-Python shingle kernels.

    python3 benchmarks/bench_profile.py --sizes 1000 10000 100000 --repeat 7

Times ``extract`` (shingle windows) and ``fnv1a_64`` (formula hashing) for
each backend on random operator trees, reports the median time and the
speedup, and checks that both backends return identical results.
"""

from __future__ import annotations

import argparse
import json
import random
import statistics
import sys
import timeit

from obsel._kernels import _pure
from obsel.formula import Formula, Kind, serialize

OPS = [Kind.ADD, Kind.MUL, Kind.SUB, Kind.UNION, Kind.OVERRIDE, Kind.MAPLET]


def random_tree(rng: random.Random, nodes: int) -> Formula:
    """Random expression tree with exactly ``nodes`` nodes, built without recursion."""
    # split sizes top-down in breadth order, then assemble bottom-up
    sizes, first_child = [nodes], []
    for n in sizes:
        first_child.append(len(sizes))
        if n == 2:
            sizes.append(1)
        elif n > 2:
            left = rng.randint(1, n - 2)
            sizes += [left, n - 1 - left]
    built: list[Formula] = [Formula.ident("x")] * len(sizes)
    for j in range(len(sizes) - 1, -1, -1):
        n, c = sizes[j], first_child[j]
        if n == 1:
            built[j] = Formula.ident(rng.choice("abcdefgh"))
        elif n == 2:
            built[j] = Formula.op(Kind.DOM, built[c])
        else:
            built[j] = Formula.op(rng.choice(OPS), built[c], built[c + 1])
    return built[0]


def median_ms(fn, repeat: int) -> float:
    return statistics.median(timeit.repeat(fn, number=1, repeat=repeat)) * 1e3


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[1_000, 10_000, 100_000])
    ap.add_argument("--n", type=int, default=3, help="shingle size")
    ap.add_argument("--repeat", type=int, default=7)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", action="store_true")
    args = ap.parse_args(argv)

    try:
        from obsel._kernels import _fast
    except ImportError:
        print("compiled kernel not built; run `pip install -e . --no-build-isolation`", file=sys.stderr)
        return 1

    rng = random.Random(args.seed)
    rows = []
    for size in args.sizes:
        f = random_tree(rng, size)
        data = serialize(f).encode("utf-8")
        if _fast.extract(f, args.n) != _pure.extract(f, args.n) or _fast.fnv1a_64(data) != _pure.fnv1a_64(data):
            print(f"backends disagree at size {size}", file=sys.stderr)
            return 1
        for name, fast, pure in (
            ("extract", lambda: _fast.extract(f, args.n), lambda: _pure.extract(f, args.n)),
            ("fnv1a_64", lambda: _fast.fnv1a_64(data), lambda: _pure.fnv1a_64(data)),
        ):
            c, p = median_ms(fast, args.repeat), median_ms(pure, args.repeat)
            rows.append({"kernel": name, "nodes": size, "cython_ms": c, "python_ms": p, "speedup": p / c})

    if args.json:
        print(json.dumps(rows, indent=2))
        return 0
    print(f"{'kernel':<10}{'nodes':>9}{'cython ms':>12}{'python ms':>12}{'speedup':>9}")
    for r in rows:
        print(f"{r['kernel']:<10}{r['nodes']:>9}{r['cython_ms']:>12.3f}{r['python_ms']:>12.3f}{r['speedup']:>8.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
