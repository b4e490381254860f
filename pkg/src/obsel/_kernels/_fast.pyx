# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled shingle extraction; same contract as obsel._kernels._pure.extract."""

from libc.stdint cimport uint64_t
from libc.stdlib cimport malloc, free

cdef int LABEL_BITS = 6


cdef inline bint _erased(long k):
    return k == 20 or k == 21 or k == 42 or k == 43 or k == 44


def extract(root, int n):
    cdef list labels_l = []
    cdef list parents_l = []
    cdef list stack = [(root, -1)]
    cdef tuple kids
    cdef Py_ssize_t j, idx
    cdef long k
    while stack:
        f, par = stack.pop()
        k = f.kind
        if _erased(k):
            continue
        idx = len(labels_l)
        labels_l.append(k)
        parents_l.append(par)
        kids = f.children
        for j in range(len(kids) - 1, -1, -1):
            stack.append((kids[j], idx))

    cdef dict depth = {}
    cdef dict structure = {}
    cdef Py_ssize_t count = len(labels_l)
    if count == 0:
        return depth, structure

    cdef long long mask = (1LL << (LABEL_BITS * n)) - 1
    cdef long long* lab = <long long*>malloc(count * sizeof(long long))
    cdef Py_ssize_t* par_a = <Py_ssize_t*>malloc(count * sizeof(Py_ssize_t))
    cdef long long* pcode = <long long*>malloc(count * sizeof(long long))
    cdef int* plen = <int*>malloc(count * sizeof(int))
    cdef Py_ssize_t* nkids = <Py_ssize_t*>malloc(count * sizeof(Py_ssize_t))
    cdef Py_ssize_t* start = <Py_ssize_t*>malloc((count + 1) * sizeof(Py_ssize_t))
    cdef Py_ssize_t* fill = <Py_ssize_t*>malloc(count * sizeof(Py_ssize_t))
    cdef long long* kidlab = <long long*>malloc(count * sizeof(long long))
    cdef Py_ssize_t i, p, m
    cdef long long code
    cdef int ln
    try:
        for i in range(count):
            lab[i] = labels_l[i]
            par_a[i] = parents_l[i]
            nkids[i] = 0

        for i in range(count):
            p = par_a[i]
            if p < 0:
                code = lab[i]
                ln = 1
            else:
                code = ((pcode[p] << LABEL_BITS) | lab[i]) & mask
                ln = plen[p] + 1
                if ln > n:
                    ln = n
                nkids[p] += 1
            pcode[i] = code
            plen[i] = ln
            if ln == n:
                key = code
                depth[key] = depth.get(key, 0) + 1

        # children labels laid out contiguously per parent, in pre-order
        start[0] = 0
        for i in range(count):
            start[i + 1] = start[i] + nkids[i]
            fill[i] = start[i]
        for i in range(1, count):
            p = par_a[i]
            kidlab[fill[p]] = lab[i]
            fill[p] += 1

        for p in range(count):
            m = nkids[p]
            if m + 1 < n:
                continue
            code = lab[p]
            ln = 1
            for j in range(start[p], start[p] + m):
                code = ((code << LABEL_BITS) | kidlab[j]) & mask
                ln += 1
                if ln >= n:
                    key = code
                    structure[key] = structure.get(key, 0) + 1
    finally:
        free(lab)
        free(par_a)
        free(pcode)
        free(plen)
        free(nkids)
        free(start)
        free(fill)
        free(kidlab)
    return depth, structure


def fnv1a_64(const unsigned char[:] data, uint64_t h=0xCBF29CE484222325ULL):
    cdef Py_ssize_t i
    for i in range(data.shape[0]):
        h ^= data[i]
        h *= 0x100000001B3ULL
    return h
