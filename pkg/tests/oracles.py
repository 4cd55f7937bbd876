"""Brute-force reference computations used by the tests. Everything here is
written from the definitions, independently of the package internals."""
import itertools
from collections import defaultdict
from fractions import Fraction

import numpy as np


def blanket_time_law(adj, start, epsilon, t_max):
    """Exact law of the blanket time of the simple random walk on a small graph.

    ``adj`` maps a vertex to its neighbour list (repeated for multi-edges).
    tau = first t >= 1 with m * count_t(x) / deg(x) >= epsilon * t for all x,
    where count_t counts visits among X_0..X_{t-1}. Returns {t: P(tau = t)}
    as exact fractions plus the mass left after t_max.
    """
    n = len(adj)
    deg = [len(adj[x]) for x in range(n)]
    m = sum(deg)
    eps = Fraction(epsilon).limit_denominator(10 ** 6)
    states = {(start, (0,) * n): Fraction(1)}
    law = {}
    for t in range(1, t_max + 1):
        nxt = defaultdict(Fraction)
        for (pos, counts), p in states.items():
            c = list(counts)
            c[pos] += 1
            if all(m * c[x] >= eps * t * deg[x] for x in range(n)):
                law[t] = law.get(t, Fraction(0)) + p
                continue
            c = tuple(c)
            for y in adj[pos]:
                nxt[(y, c)] += p / deg[pos]
        states = nxt
    return law, sum(states.values(), Fraction(0))


def prokhorov_brute(mu, nu, d):
    """Prokhorov distance by enumerating every subset of the support.

    For closed neighbourhoods f(e) = max_A mu(A) - nu(A^e) (and the symmetric
    term) is a right-continuous step function with jumps at the distances, so
    the infimum of {e : f(e) <= e} is attained at max(d_k, f(d_k)) for some
    distance level d_k.
    """
    mu, nu, d = map(np.asarray, (mu, nu, d))
    n = len(mu)
    levels = np.unique(np.concatenate([[0.0], d.ravel()]))
    subsets = [s for r in range(1, n + 1) for s in itertools.combinations(range(n), r)]
    best = np.inf
    for k, e in enumerate(levels):
        f = 0.0
        for A in subsets:
            nbhd = np.flatnonzero(d[list(A)].min(axis=0) <= e)
            f = max(f, mu[list(A)].sum() - nu[nbhd].sum(), nu[list(A)].sum() - mu[nbhd].sum())
        cand = max(e, f)
        if k + 1 < len(levels) and cand >= levels[k + 1]:
            continue
        best = min(best, cand)
    return float(best)


def j1_brute(t1, v1, t2, v2, T, d, combine="sum"):
    """J1 distance between step paths by enumerating where each jump of the
    first path lands relative to the jumps of the second.

    A jump of path 1 may coincide with a jump b_j of path 2 (each used once)
    or fall in the open gap between consecutive jumps (including 0 and T).
    """
    a = list(t1[1:])
    b = list(t2[1:])
    q = len(b)
    # slots in order: gap 0, jump 1, gap 1, ..., jump q, gap q
    slots = [("gap", 0)]
    for j in range(1, q + 1):
        slots += [("jump", j), ("gap", j)]
    edges = [0.0] + b + [T]
    best = np.inf
    for assign in itertools.combinations_with_replacement(range(len(slots)), len(a)):
        used = [slots[s] for s in assign]
        jumps = [j for kind, j in used if kind == "jump"]
        if len(jumps) != len(set(jumps)):
            continue
        tc = 0.0
        for ai, (kind, j) in zip(a, used):
            if kind == "jump":
                tc = max(tc, abs(ai - edges[j]))
            else:
                lo, hi = edges[j], edges[j + 1]
                tc = max(tc, lo - ai if ai < lo else (ai - hi if ai > hi else 0.0))
        # g-segment range covered by each f-segment
        start = [0] + [j for _, j in used]
        end = [(j - 1 if kind == "jump" else j) for kind, j in used] + [q]
        sc = 0.0
        for i in range(len(a) + 1):
            for s in range(start[i], end[i] + 1):
                sc = max(sc, d[v1[i], v2[s]])
        best = min(best, tc + sc if combine == "sum" else max(tc, sc))
    return float(best)


def glued_brute(d, pairs):
    """Quotient distance after identifying each pair: min over ordered,
    oriented chains of distinct identifications of the summed tree distances."""
    n = d.shape[0]
    out = d.copy()
    k = len(pairs)
    for x in range(n):
        for y in range(n):
            best = d[x, y]
            for r in range(1, k + 1):
                for chain in itertools.permutations(range(k), r):
                    for orient in itertools.product((0, 1), repeat=r):
                        cur, total = x, 0.0
                        for i, o in zip(chain, orient):
                            p, q = pairs[i] if o == 0 else pairs[i][::-1]
                            total += d[cur, p]
                            cur = q
                        best = min(best, total + d[cur, y])
            out[x, y] = best
    return out


def connected_graphs_with_degrees(deg):
    """All labelled simple connected graphs with the given degree sequence."""
    n = len(deg)
    m = sum(deg) // 2
    pairs = list(itertools.combinations(range(n), 2))
    out = []
    for es in itertools.combinations(pairs, m):
        dd = [0] * n
        for a, b in es:
            dd[a] += 1
            dd[b] += 1
        if dd != list(deg):
            continue
        seen, stack = {0}, [0]
        while stack:
            v = stack.pop()
            for a, b in es:
                for s, t in ((a, b), (b, a)):
                    if s == v and t not in seen:
                        seen.add(t)
                        stack.append(t)
        if len(seen) == n:
            out.append(frozenset(es))
    return out


def graph_key(g):
    return frozenset((min(a, b), max(a, b)) for a, b in zip(g.u.tolist(), g.v.tolist()))
