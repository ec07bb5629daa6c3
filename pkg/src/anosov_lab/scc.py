"""Strongly connected components and class reachability on CSR graphs."""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def tarjan_scc(indptr, indices, n):
    """Iterative Tarjan.  Component ids come out in reverse topological order:
    an edge between different components always points to the smaller id."""
    index = np.full(n, -1, np.int64)
    low = np.zeros(n, np.int64)
    onstack = np.zeros(n, np.bool_)
    stack = np.empty(n, np.int64)
    cs_node = np.empty(n, np.int64)
    cs_edge = np.empty(n, np.int64)
    comp = np.full(n, -1, np.int64)
    sp = 0
    counter = 0
    ncomp = 0
    for root in range(n):
        if index[root] != -1:
            continue
        index[root] = counter
        low[root] = counter
        counter += 1
        stack[sp] = root
        sp += 1
        onstack[root] = True
        cs_node[0] = root
        cs_edge[0] = indptr[root]
        csp = 1
        while csp > 0:
            v = cs_node[csp - 1]
            e = cs_edge[csp - 1]
            if e < indptr[v + 1]:
                cs_edge[csp - 1] = e + 1
                w = indices[e]
                if index[w] == -1:
                    index[w] = counter
                    low[w] = counter
                    counter += 1
                    stack[sp] = w
                    sp += 1
                    onstack[w] = True
                    cs_node[csp] = w
                    cs_edge[csp] = indptr[w]
                    csp += 1
                elif onstack[w]:
                    if index[w] < low[v]:
                        low[v] = index[w]
            else:
                if low[v] == index[v]:
                    while True:
                        sp -= 1
                        x = stack[sp]
                        onstack[x] = False
                        comp[x] = ncomp
                        if x == v:
                            break
                    ncomp += 1
                csp -= 1
                if csp > 0:
                    u = cs_node[csp - 1]
                    if low[v] < low[u]:
                        low[u] = low[v]
    return comp, ncomp


@njit(cache=True)
def self_loops(indptr, indices, n):
    out = np.zeros(n, np.bool_)
    for v in range(n):
        for e in range(indptr[v], indptr[v + 1]):
            if indices[e] == v:
                out[v] = True
                break
    return out


@njit(cache=True)
def class_reach(indptr, indices, comp, ncomp, comp_class, nclass):
    """Bitsets (ncomp, words) of classes reachable from each component by a nonempty path
    leaving the component.  Relies on the reverse topological numbering of comp."""
    words = (nclass + 63) // 64
    reach = np.zeros((ncomp, max(words, 1)), np.uint64)
    order = np.argsort(comp, kind="mergesort")
    n = len(comp)
    for pos in range(n):
        v = order[pos]
        a = comp[v]
        for e in range(indptr[v], indptr[v + 1]):
            b = comp[indices[e]]
            if b == a:
                continue
            for w in range(words):
                reach[a, w] |= reach[b, w]
            c = comp_class[b]
            if c >= 0:
                reach[a, c // 64] |= np.uint64(1) << np.uint64(c % 64)
    return reach


def unpack_bits(bits: np.ndarray, nclass: int) -> np.ndarray:
    """(m, words) uint64 -> (m, nclass) bool."""
    if nclass == 0:
        return np.zeros((len(bits), 0), dtype=bool)
    as_bytes = bits.astype("<u8").view(np.uint8).reshape(len(bits), -1)
    flat = np.unpackbits(as_bytes, axis=1, bitorder="little")
    return flat[:, :nclass].astype(bool)
