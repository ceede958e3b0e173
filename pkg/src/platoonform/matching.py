"""Maximum-weight matching in general graphs (primal-dual blossom method).

Integer weights keep every dual update exact. The solver can be interrupted
by a deadline; the matching held at that point is always valid and the dual
variables remain feasible, so the dual objective is an upper bound on the
optimum.

The structure follows the classic O(n^3) formulation with explicit blossom
bookkeeping (labels, base vertices, endpoint lists).
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Optional, Sequence


class _Interrupted(Exception):
    pass


@dataclass
class MatchingResult:
    mate: list[int]  # partner vertex or -1
    weight: int
    upper_bound: int  # twice the dual objective, halved below; equals weight when complete
    complete: bool


def max_weight_matching(
    nvertex: int,
    edges: Sequence[tuple[int, int, int]],
    deadline: Optional[float] = None,
    clock: Callable[[], float] = time.perf_counter,
) -> MatchingResult:
    """Maximum-weight (not maximum-cardinality) matching.

    Parameters
    ----------
    nvertex : int
        Vertices are ``0..nvertex-1``.
    edges : sequence of (i, j, w)
        Undirected edges with positive integer weights, no self loops.
    deadline : float, optional
        Absolute ``clock()`` value after which the search stops and returns
        the current matching together with a dual upper bound.
    """
    nedge = len(edges)
    if nedge == 0:
        return MatchingResult([-1] * nvertex, 0, 0, True)
    for i, j, w in edges:
        if i == j:
            raise ValueError("self loop in matching graph")

    # work with doubled weights so every dual stays an integer
    wts = [2 * w for (_, _, w) in edges]
    endpoint = [edges[p // 2][p % 2] for p in range(2 * nedge)]
    neighbend: list[list[int]] = [[] for _ in range(nvertex)]
    for k, (i, j, _) in enumerate(edges):
        neighbend[i].append(2 * k + 1)
        neighbend[j].append(2 * k)

    maxweight = max(0, max(wts))
    mate = [-1] * nvertex
    label = [0] * (2 * nvertex)
    labelend = [-1] * (2 * nvertex)
    inblossom = list(range(nvertex))
    blossomparent = [-1] * (2 * nvertex)
    blossomchilds: list[Optional[list[int]]] = [None] * (2 * nvertex)
    blossombase = list(range(nvertex)) + [-1] * nvertex
    blossomendps: list[Optional[list[int]]] = [None] * (2 * nvertex)
    bestedge = [-1] * (2 * nvertex)
    blossombestedges: list[Optional[list[int]]] = [None] * (2 * nvertex)
    unusedblossoms = list(range(nvertex, 2 * nvertex))
    dualvar = [maxweight] * nvertex + [0] * nvertex
    allowedge = [False] * nedge
    queue: list[int] = []

    def slack(k):
        i, j, _ = edges[k]
        return dualvar[i] + dualvar[j] - 2 * wts[k]

    def blossom_leaves(b):
        if b < nvertex:
            yield b
        else:
            for t in blossomchilds[b]:
                if t < nvertex:
                    yield t
                else:
                    yield from blossom_leaves(t)

    def assign_label(w, t, p):
        b = inblossom[w]
        label[w] = label[b] = t
        labelend[w] = labelend[b] = p
        bestedge[w] = bestedge[b] = -1
        if t == 1:
            queue.extend(blossom_leaves(b))
        elif t == 2:
            base = blossombase[b]
            assign_label(endpoint[mate[base]], 1, mate[base] ^ 1)

    def scan_blossom(v, w):
        # trace back from v and w to find a common base (new blossom) or -1 (augmenting path)
        path = []
        base = -1
        while v != -1 or w != -1:
            b = inblossom[v]
            if label[b] & 4:
                base = blossombase[b]
                break
            path.append(b)
            label[b] = 5
            if labelend[b] == -1:
                v = -1
            else:
                v = endpoint[labelend[b]]
                b = inblossom[v]
                v = endpoint[labelend[b]]
            if w != -1:
                v, w = w, v
        for b in path:
            label[b] = 1
        return base

    def add_blossom(base, k):
        v, w, _ = edges[k]
        bb = inblossom[base]
        bv = inblossom[v]
        bw = inblossom[w]
        b = unusedblossoms.pop()
        blossombase[b] = base
        blossomparent[b] = -1
        blossomparent[bb] = b
        path: list[int] = []
        endps: list[int] = []
        blossomchilds[b] = path
        blossomendps[b] = endps
        while bv != bb:
            blossomparent[bv] = b
            path.append(bv)
            endps.append(labelend[bv])
            v = endpoint[labelend[bv]]
            bv = inblossom[v]
        path.append(bb)
        path.reverse()
        endps.reverse()
        endps.append(2 * k)
        while bw != bb:
            blossomparent[bw] = b
            path.append(bw)
            endps.append(labelend[bw] ^ 1)
            w = endpoint[labelend[bw]]
            bw = inblossom[w]
        label[b] = 1
        labelend[b] = labelend[bb]
        dualvar[b] = 0
        for v in blossom_leaves(b):
            if label[inblossom[v]] == 2:
                queue.append(v)
            inblossom[v] = b
        bestedgeto = [-1] * (2 * nvertex)
        for bv in path:
            if blossombestedges[bv] is None:
                nblists = [[p // 2 for p in neighbend[v]] for v in blossom_leaves(bv)]
            else:
                nblists = [blossombestedges[bv]]
            for nblist in nblists:
                for k in nblist:
                    i, j, _ = edges[k]
                    if inblossom[j] == b:
                        i, j = j, i
                    bj = inblossom[j]
                    if bj != b and label[bj] == 1 and (bestedgeto[bj] == -1 or slack(k) < slack(bestedgeto[bj])):
                        bestedgeto[bj] = k
            blossombestedges[bv] = None
            bestedge[bv] = -1
        blossombestedges[b] = [k for k in bestedgeto if k != -1]
        bestedge[b] = -1
        for k in blossombestedges[b]:
            if bestedge[b] == -1 or slack(k) < slack(bestedge[b]):
                bestedge[b] = k

    def expand_blossom(b, endstage):
        for s in blossomchilds[b]:
            blossomparent[s] = -1
            if s < nvertex:
                inblossom[s] = s
            elif endstage and dualvar[s] == 0:
                expand_blossom(s, endstage)
            else:
                for v in blossom_leaves(s):
                    inblossom[v] = s
        if not endstage and label[b] == 2:
            # relabel the sub-blossoms along the even path from the entry child to the base
            entrychild = inblossom[endpoint[labelend[b] ^ 1]]
            j = blossomchilds[b].index(entrychild)
            if j & 1:
                j -= len(blossomchilds[b])
                jstep = 1
                endptrick = 0
            else:
                jstep = -1
                endptrick = 1
            p = labelend[b]
            while j != 0:
                label[endpoint[p ^ 1]] = 0
                label[endpoint[blossomendps[b][j - endptrick] ^ endptrick ^ 1]] = 0
                assign_label(endpoint[p ^ 1], 2, p)
                allowedge[blossomendps[b][j - endptrick] // 2] = True
                j += jstep
                p = blossomendps[b][j - endptrick] ^ endptrick
                allowedge[p // 2] = True
                j += jstep
            bv = blossomchilds[b][j]
            label[endpoint[p ^ 1]] = label[bv] = 2
            labelend[endpoint[p ^ 1]] = labelend[bv] = p
            bestedge[bv] = -1
            j += jstep
            while blossomchilds[b][j] != entrychild:
                bv = blossomchilds[b][j]
                if label[bv] == 1:
                    j += jstep
                    continue
                v = -1
                for v in blossom_leaves(bv):
                    if label[v] != 0:
                        break
                if label[v] != 0:
                    label[v] = 0
                    label[endpoint[mate[blossombase[bv]]]] = 0
                    assign_label(v, 2, labelend[v])
                j += jstep
        label[b] = labelend[b] = -1
        blossomchilds[b] = blossomendps[b] = None
        blossombase[b] = -1
        blossombestedges[b] = None
        bestedge[b] = -1
        unusedblossoms.append(b)

    def augment_blossom(b, v):
        t = v
        while blossomparent[t] != b:
            t = blossomparent[t]
        if t >= nvertex:
            augment_blossom(t, v)
        i = j = blossomchilds[b].index(t)
        if i & 1:
            j -= len(blossomchilds[b])
            jstep = 1
            endptrick = 0
        else:
            jstep = -1
            endptrick = 1
        while j != 0:
            j += jstep
            t = blossomchilds[b][j]
            p = blossomendps[b][j - endptrick] ^ endptrick
            if t >= nvertex:
                augment_blossom(t, endpoint[p])
            j += jstep
            t = blossomchilds[b][j]
            if t >= nvertex:
                augment_blossom(t, endpoint[p ^ 1])
            mate[endpoint[p]] = p ^ 1
            mate[endpoint[p ^ 1]] = p
        blossomchilds[b] = blossomchilds[b][i:] + blossomchilds[b][:i]
        blossomendps[b] = blossomendps[b][i:] + blossomendps[b][:i]
        blossombase[b] = blossombase[blossomchilds[b][0]]

    def augment_matching(k):
        v, w, _ = edges[k]
        for s, p in ((v, 2 * k + 1), (w, 2 * k)):
            while True:
                bs = inblossom[s]
                if bs >= nvertex:
                    augment_blossom(bs, s)
                mate[s] = p
                if labelend[bs] == -1:
                    break
                t = endpoint[labelend[bs]]
                bt = inblossom[t]
                s = endpoint[labelend[bt]]
                j = endpoint[labelend[bt] ^ 1]
                if bt >= nvertex:
                    augment_blossom(bt, j)
                mate[j] = labelend[bt]
                p = labelend[bt] ^ 1

    def check_deadline():
        if deadline is not None and clock() > deadline:
            raise _Interrupted

    complete = True
    pops = 0
    try:
        for _ in range(nvertex):
            check_deadline()
            label[:] = [0] * (2 * nvertex)
            bestedge[:] = [-1] * (2 * nvertex)
            blossombestedges[nvertex:] = [None] * nvertex
            allowedge[:] = [False] * nedge
            queue[:] = []
            for v in range(nvertex):
                if mate[v] == -1 and label[inblossom[v]] == 0:
                    assign_label(v, 1, -1)
            augmented = False
            while True:
                check_deadline()
                while queue and not augmented:
                    v = queue.pop()
                    pops += 1
                    if pops % 64 == 0:
                        check_deadline()
                    for p in neighbend[v]:
                        k = p // 2
                        w = endpoint[p]
                        if inblossom[v] == inblossom[w]:
                            continue
                        if not allowedge[k]:
                            kslack = slack(k)
                            if kslack <= 0:
                                allowedge[k] = True
                        if allowedge[k]:
                            if label[inblossom[w]] == 0:
                                assign_label(w, 2, p ^ 1)
                            elif label[inblossom[w]] == 1:
                                base = scan_blossom(v, w)
                                if base >= 0:
                                    add_blossom(base, k)
                                else:
                                    augment_matching(k)
                                    augmented = True
                                    break
                            elif label[w] == 0:
                                label[w] = 2
                                labelend[w] = p ^ 1
                        elif label[inblossom[w]] == 1:
                            b = inblossom[v]
                            if bestedge[b] == -1 or kslack < slack(bestedge[b]):
                                bestedge[b] = k
                        elif label[w] == 0:
                            if bestedge[w] == -1 or kslack < slack(bestedge[w]):
                                bestedge[w] = k
                if augmented:
                    break

                # dual update: the smallest step that keeps every slack non-negative
                deltatype = 1
                delta = min(dualvar[:nvertex])
                deltaedge = deltablossom = -1
                for v in range(nvertex):
                    if label[inblossom[v]] == 0 and bestedge[v] != -1:
                        d = slack(bestedge[v])
                        if d < delta:
                            delta = d
                            deltatype = 2
                            deltaedge = bestedge[v]
                for b in range(2 * nvertex):
                    if blossomparent[b] == -1 and label[b] == 1 and bestedge[b] != -1:
                        d = slack(bestedge[b]) // 2
                        if d < delta:
                            delta = d
                            deltatype = 3
                            deltaedge = bestedge[b]
                for b in range(nvertex, 2 * nvertex):
                    if blossombase[b] >= 0 and blossomparent[b] == -1 and label[b] == 2 and dualvar[b] < delta:
                        delta = dualvar[b]
                        deltatype = 4
                        deltablossom = b

                for v in range(nvertex):
                    lb = label[inblossom[v]]
                    if lb == 1:
                        dualvar[v] -= delta
                    elif lb == 2:
                        dualvar[v] += delta
                for b in range(nvertex, 2 * nvertex):
                    if blossombase[b] >= 0 and blossomparent[b] == -1:
                        if label[b] == 1:
                            dualvar[b] += delta
                        elif label[b] == 2:
                            dualvar[b] -= delta

                if deltatype == 1:
                    break
                elif deltatype == 2:
                    allowedge[deltaedge] = True
                    i, j, _ = edges[deltaedge]
                    if label[inblossom[i]] == 0:
                        i, j = j, i
                    queue.append(i)
                elif deltatype == 3:
                    allowedge[deltaedge] = True
                    i, j, _ = edges[deltaedge]
                    queue.append(i)
                else:
                    expand_blossom(deltablossom, False)

            if not augmented:
                break
            for b in range(nvertex, 2 * nvertex):
                if blossomparent[b] == -1 and blossombase[b] >= 0 and label[b] == 1 and dualvar[b] == 0:
                    expand_blossom(b, True)
    except _Interrupted:
        complete = False

    partner = [endpoint[mate[v]] if mate[v] >= 0 else -1 for v in range(nvertex)]
    weight = sum(edges[mate[v] // 2][2] for v in range(nvertex) if mate[v] >= 0 and v < partner[v])
    if complete:
        bound = weight
    else:
        bound = _dual_bound(nvertex, dualvar, blossombase, blossom_leaves)
        bound = max(bound, weight)
    return MatchingResult(partner, weight, bound, complete)


def _dual_bound(nvertex, dualvar, blossombase, blossom_leaves) -> int:
    # doubled weights: 2w(i,j) <= U_i + U_j + 2 * sum(Z_B over blossoms holding both ends)
    doubled = sum(dualvar[:nvertex])
    for b in range(nvertex, 2 * nvertex):
        if blossombase[b] >= 0 and dualvar[b] > 0:
            doubled += 2 * dualvar[b] * (sum(1 for _ in blossom_leaves(b)) // 2)
    # dual is in doubled-weight units (x2) and vertex duals count each edge twice (x2)
    return -(-doubled // 4)
