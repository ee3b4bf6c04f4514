"""Brute-force reference implementations of the solvability conditions.

Written independently of ``granular.graph``: reachability enumerates every
simple path explicitly, and component sizes come from networkx. Graphs are
passed as ``(n, {frozenset({u, v}): "sync" | "psync" | "async"})``.
"""

from itertools import combinations, permutations

import networkx as nx


def _edge_ok(edges, u, v, allowed):
    return edges.get(frozenset((u, v))) in allowed


def path_reach(n, edges, faulty, a, allowed=("sync",)):
    """Every b such that some simple path a..b uses only `allowed` edges and
    has no faulty intermediate node."""
    reached = {a}
    others = [x for x in range(n) if x != a]
    for b in others:
        middles = [x for x in range(n) if x not in (a, b) and x not in faulty]
        found = False
        for k in range(len(middles) + 1):
            for mid in permutations(middles, k):
                hops = (a,) + mid + (b,)
                if all(_edge_ok(edges, hops[i], hops[i + 1], allowed) for i in range(len(hops) - 1)):
                    found = True
                    break
            if found:
                break
        if found:
            reached.add(b)
    return reached


def fault_sets(n, f, exact=False):
    sizes = [f] if exact else range(f + 1)
    for size in sizes:
        yield from (set(c) for c in combinations(range(n), size))


def cft_gps(n, edges, f):
    for F in fault_sets(n, f):
        for A in combinations(range(n), n - f):
            reach = set()
            for a in A:
                reach |= path_reach(n, edges, F, a)
            if len(reach) < f + 1:
                return False
    return True


def bft_gps(n, edges, f):
    for F in fault_sets(n, f):
        correct = [x for x in range(n) if x not in F]
        for A in combinations(correct, n - 2 * f):
            reach = set()
            for a in A:
                reach |= path_reach(n, edges, F, a)
            if len(reach - F) < f + 1:
                return False
    return True


def _components(n, edges, F):
    g = nx.Graph()
    alive = [x for x in range(n) if x not in F]
    g.add_nodes_from(alive)
    for pair, cls in edges.items():
        u, v = tuple(pair)
        if cls in ("sync", "psync") and u not in F and v not in F:
            g.add_edge(u, v)
    return [len(c) for c in nx.connected_components(g)]


def cft_gas_components(n, edges, f):
    for F in fault_sets(n, f):
        sizes = _components(n, edges, F)
        outside = sum(sizes) - max(sizes, default=0)
        if outside >= n - f:
            return False
    return True


def bft_gas_sources(n, edges, f):
    for F in fault_sets(n, f):
        sizes = _components(n, edges, F)
        if max(sizes, default=0) < f + 1:
            return False
    return True


def diamond_f_source(n, edges, f, F):
    return max(_components(n, edges, set(F)), default=0) >= f + 1


def diameter(n, edges, f, allowed, correct_pairs_only):
    """Longest shortest path over all fault sets and connected pairs, or
    None when no pair of distinct nodes is connected."""
    best = None
    for F in fault_sets(n, f):
        for a in range(n):
            for b in range(n):
                if a == b or (correct_pairs_only and (a in F or b in F)):
                    continue
                middles = [x for x in range(n) if x not in (a, b) and x not in F]
                shortest = None
                for k in range(len(middles) + 1):
                    for mid in permutations(middles, k):
                        hops = (a,) + mid + (b,)
                        if all(_edge_ok(edges, hops[i], hops[i + 1], allowed) for i in range(len(hops) - 1)):
                            shortest = k + 1
                            break
                    if shortest is not None:
                        break
                if shortest is not None and (best is None or shortest > best):
                    best = shortest
    return best
