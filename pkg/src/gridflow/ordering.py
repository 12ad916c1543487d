"""Fill-reducing (approximate minimum degree) and bandwidth-reducing (RCM) orderings."""
from __future__ import annotations

import heapq
from collections import deque

from .sparse import Permutation, SparseMatrix, SparsityPattern


def _as_pattern(p) -> SparsityPattern:
    if isinstance(p, SparseMatrix):
        return p.pattern
    return p


def amd_order(pattern) -> Permutation:
    """Minimum-degree elimination ordering on the quotient graph.

    Degrees are the approximate external degrees of Amestoy, Davis and Duff
    (an upper bound on the true external degree), with element absorption
    but no supervariable detection. Ties go to the lowest index.
    """
    pattern = _as_pattern(pattern)
    n = pattern.n_rows
    adj = pattern.neighbor_sets()
    elems: list[set[int] | None] = [set() for _ in range(n)]
    members: dict[int, set[int]] = {}
    deg = [len(a) for a in adj]
    heap = [(deg[i], i) for i in range(n)]
    heapq.heapify(heap)
    done = [False] * n
    order: list[int] = []

    while heap:
        d, p = heapq.heappop(heap)
        if done[p] or d != deg[p]:
            continue
        lp = set(adj[p])
        for e in elems[p]:
            lp |= members.pop(e)
        lp.discard(p)
        done[p] = True
        order.append(p)
        absorbed = elems[p]
        adj[p] = None
        elems[p] = None

        for i in lp:
            adj[i] -= lp
            adj[i].discard(p)
            elems[i] -= absorbed

        # w[e] = |L_e \ L_p| for every element touching the new one
        w: dict[int, int] = {}
        for i in lp:
            for e in elems[i]:
                if e in w:
                    w[e] -= 1
                else:
                    w[e] = len(members[e]) - 1
        for e, we in w.items():
            if we == 0:
                for i in members.pop(e):
                    elems[i].discard(e)

        members[p] = lp
        n_left = n - len(order)
        size = len(lp)
        for i in lp:
            external = len(adj[i]) + size - 1
            for e in elems[i]:
                external += w[e]
            elems[i].add(p)
            dnew = min(n_left - 1, deg[i] + size - 1, external)
            deg[i] = dnew
            heapq.heappush(heap, (dnew, i))

    return Permutation.from_order(order)


def _bfs_levels(adj, start, degree):
    levels = [[start]]
    seen = {start}
    while True:
        nxt = []
        for u in levels[-1]:
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    nxt.append(v)
        if not nxt:
            return levels
        levels.append(nxt)


def _pseudo_peripheral(adj, component, degree):
    start = min(component, key=lambda v: (degree[v], v))
    levels = _bfs_levels(adj, start, degree)
    while True:
        cand = min(levels[-1], key=lambda v: (degree[v], v))
        cand_levels = _bfs_levels(adj, cand, degree)
        if len(cand_levels) <= len(levels):
            return start
        start, levels = cand, cand_levels


def rcm_order(pattern) -> Permutation:
    """Reverse Cuthill-McKee, one component at a time.

    Components are laid out in order of their lowest node index and each one
    is reversed on its own, so isolated nodes keep their positions.
    """
    pattern = _as_pattern(pattern)
    n = pattern.n_rows
    sym = pattern.symmetrized()
    ro, ci = sym.row_offsets, sym.col_indices
    adj = [ci[ro[i] : ro[i + 1]].tolist() for i in range(n)]
    degree = [len(a) for a in adj]
    adj_sorted = [sorted(a, key=lambda v: (degree[v], v)) for a in adj]
    placed = [False] * n
    order: list[int] = []
    for root in range(n):
        if placed[root]:
            continue
        component = [v for level in _bfs_levels(adj, root, degree) for v in level]
        start = _pseudo_peripheral(adj, component, degree)
        visit = [start]
        placed[start] = True
        queue = deque([start])
        while queue:
            u = queue.popleft()
            for v in adj_sorted[u]:
                if not placed[v]:
                    placed[v] = True
                    visit.append(v)
                    queue.append(v)
        order.extend(reversed(visit))
    return Permutation.from_order(order)


def symbolic_fill(pattern, perm: Permutation | None = None) -> int:
    """Count fill edges created by symmetric elimination in the order given by ``perm``."""
    pattern = _as_pattern(pattern)
    adj = pattern.neighbor_sets()
    n = pattern.n_rows
    seq = range(n) if perm is None else perm.inverse.tolist()
    gone = [False] * n
    fill = 0
    for v in seq:
        nbrs = [u for u in adj[v] if not gone[u]]
        for a in range(len(nbrs)):
            ua = nbrs[a]
            for b in range(a + 1, len(nbrs)):
                ub = nbrs[b]
                if ub not in adj[ua]:
                    adj[ua].add(ub)
                    adj[ub].add(ua)
                    fill += 1
        gone[v] = True
    return fill
