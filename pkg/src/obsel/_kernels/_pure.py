"""Pure-Python shingle extraction over a formula's operator skeleton.

A window of labels [l0, ..., l(n-1)] is encoded as the integer
sum(l_j << LABEL_BITS * (n - 1 - j)).  Label ids are nonzero, so codes for
different window lengths never collide.
"""

LABEL_BITS = 6
FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK = 0xFFFFFFFFFFFFFFFF
# Ident, IntLit, Nat, Int, MetaVar
ERASED = frozenset({20, 21, 42, 43, 44})


def flatten(root):
    """Pre-order label and parent arrays of the skeleton (erased leaves dropped)."""
    labels = []
    parents = []
    stack = [(root, -1)]
    pop = stack.pop
    push = stack.append
    while stack:
        f, par = pop()
        k = int(f.kind)
        if k in ERASED:
            continue
        idx = len(labels)
        labels.append(k)
        parents.append(par)
        kids = f.children
        for j in range(len(kids) - 1, -1, -1):
            push((kids[j], idx))
    return labels, parents


def extract(root, n):
    """Return (depth counts, structure counts) keyed by window code."""
    labels, parents = flatten(root)
    depth = {}
    structure = {}
    count = len(labels)
    if count == 0:
        return depth, structure
    mod = 1 << (LABEL_BITS * n)

    # depth windows: one per node whose root path is at least n long
    pcode = [0] * count
    plen = [0] * count
    for i in range(count):
        p = parents[i]
        if p < 0:
            code = labels[i]
            ln = 1
        else:
            code = ((pcode[p] << LABEL_BITS) | labels[i]) % mod
            ln = plen[p] + 1
            if ln > n:
                ln = n
        pcode[i] = code
        plen[i] = ln
        if ln == n:
            depth[code] = depth.get(code, 0) + 1

    # structure windows over [parent, child1, ..., childm]
    kids = [None] * count
    for i in range(1, count):
        p = parents[i]
        lst = kids[p]
        if lst is None:
            kids[p] = [labels[i]]
        else:
            lst.append(labels[i])
    for p in range(count):
        lst = kids[p]
        if lst is None or len(lst) + 1 < n:
            continue
        code = labels[p]
        ln = 1
        for lab in lst:
            code = ((code << LABEL_BITS) | lab) % mod
            ln += 1
            if ln >= n:
                structure[code] = structure.get(code, 0) + 1
    return depth, structure


def fnv1a_64(data, h=FNV_OFFSET):
    """64-bit FNV-1a over ``data``, continuing from state ``h``."""
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK
    return h
