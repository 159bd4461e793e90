"""Brute-force edit distance: breadth-first search over single-token edit scripts.

Every string of length <= L over a V-token alphabet is a graph node; edges are
one insertion, deletion or substitution. The BFS distance from ref to hyp is
the minimal number of edits, found without any alignment table. Restricting
nodes to length <= L is safe because deletions and substitutions can always
be applied before insertions, so an optimal script never exceeds
max(len(ref), len(hyp)).
"""
import numba
import numpy as np

from paravox.evaluation import edit_counts


@numba.njit(cache=True)
def _offsets(v, max_len):
    off = np.zeros(max_len + 2, dtype=np.int64)
    for l in range(max_len + 1):
        off[l + 1] = off[l] + v ** l
    return off


@numba.njit(cache=True)
def _decode(node, off, v, digits):
    l = 0
    while off[l + 1] <= node:
        l += 1
    val = node - off[l]
    for i in range(l - 1, -1, -1):
        digits[i] = val % v
        val //= v
    return l


@numba.njit(cache=True)
def _encode(digits, l, off, v):
    val = 0
    for i in range(l):
        val = val * v + digits[i]
    return off[l] + val


@numba.njit(cache=True)
def _bfs(src, off, v, max_len, dist, queue):
    dist[:] = -1
    dist[src] = 0
    head, tail = 0, 1
    queue[0] = src
    cur = np.empty(max_len + 1, dtype=np.int64)
    nb = np.empty(max_len + 1, dtype=np.int64)
    while head < tail:
        node = queue[head]
        head += 1
        l = _decode(node, off, v, cur)
        d = dist[node] + 1
        for i in range(l):  # deletions
            k = 0
            for j in range(l):
                if j != i:
                    nb[k] = cur[j]
                    k += 1
            n2 = _encode(nb, l - 1, off, v)
            if dist[n2] < 0:
                dist[n2] = d
                queue[tail] = n2
                tail += 1
        for i in range(l):  # substitutions
            for t in range(v):
                if t == cur[i]:
                    continue
                for j in range(l):
                    nb[j] = cur[j]
                nb[i] = t
                n2 = _encode(nb, l, off, v)
                if dist[n2] < 0:
                    dist[n2] = d
                    queue[tail] = n2
                    tail += 1
        if l < max_len:  # insertions
            for i in range(l + 1):
                for t in range(v):
                    for j in range(i):
                        nb[j] = cur[j]
                    nb[i] = t
                    for j in range(i, l):
                        nb[j + 1] = cur[j]
                    n2 = _encode(nb, l + 1, off, v)
                    if dist[n2] < 0:
                        dist[n2] = d
                        queue[tail] = n2
                        tail += 1


@numba.njit(cache=True)
def compare_all(v, max_len):
    """Check edit_counts against BFS for every (ref, hyp) with 1 <= |ref| and |hyp| <= max_len.

    Returns (pairs checked, mismatches, bad count arithmetic).
    """
    off = _offsets(v, max_len)
    n = off[max_len + 1]
    pairs = np.zeros(n, dtype=np.int64)
    bad = np.zeros(n, dtype=np.int64)
    bad_counts = np.zeros(n, dtype=np.int64)
    for src in range(1, n):
        dist = np.empty(n, dtype=np.int64)
        queue = np.empty(n, dtype=np.int64)
        rd = np.empty(max_len + 1, dtype=np.int64)
        hd = np.empty(max_len + 1, dtype=np.int64)
        _bfs(src, off, v, max_len, dist, queue)
        rl = _decode(src, off, v, rd)
        ref = rd[:rl].copy()
        for dst in range(n):
            hl = _decode(dst, off, v, hd)
            s, de, ins = edit_counts(ref, hd[:hl])
            if s + de + ins != dist[dst]:
                bad[src] += 1
            # Alignment bookkeeping: |hyp| = |ref| - D + I, and S <= matched pairs.
            if hl != rl - de + ins or s + de > rl or s < 0:
                bad_counts[src] += 1
            pairs[src] += 1
    return pairs.sum(), bad.sum(), bad_counts.sum()


def bfs_distance(ref, hyp, vocab_size, max_len):
    off = _offsets(vocab_size, max_len)
    n = off[max_len + 1]
    dist = np.empty(n, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    src = _encode(np.asarray(ref, dtype=np.int64), len(ref), off, vocab_size)
    _bfs(src, off, vocab_size, max_len, dist, queue)
    return int(dist[_encode(np.asarray(hyp, dtype=np.int64), len(hyp), off, vocab_size)])
