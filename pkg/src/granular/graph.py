"""Timed communication graphs and the solvability conditions over them.

A :class:`TimedGraph` is an undirected graph whose links each carry a
:class:`TimingClass`. Pairs without a stored link behave like asynchronous
links for every condition below; the simulator, however, requires every pair
to be classed explicitly.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Iterator, Optional


class TimingClass(enum.Enum):
    SYNC = "sync"
    PSYNC = "psync"
    ASYNC = "async"

    def __str__(self) -> str:
        return self.value


DIAMOND = frozenset({TimingClass.SYNC, TimingClass.PSYNC})
SYNC_ONLY = frozenset({TimingClass.SYNC})


class GraphError(ValueError):
    pass


def _pair(u: int, v: int) -> tuple[int, int]:
    return (u, v) if u < v else (v, u)


@dataclass(frozen=True, eq=False)
class TimedGraph:
    """Undirected graph on nodes ``0..n-1`` with one timing class per link."""

    n: int
    links: dict = field(default_factory=dict)

    def __eq__(self, other):
        if not isinstance(other, TimedGraph):
            return NotImplemented
        return self.n == other.n and self.links == other.links

    def __hash__(self):
        return hash((self.n, frozenset(self.links.items())))

    def __post_init__(self):
        if self.n < 1:
            raise GraphError("graph needs at least one node")
        clean = {}
        for (u, v), cls in dict(self.links).items():
            if u == v:
                raise GraphError(f"self-edge on node {u}")
            if not (0 <= u < self.n and 0 <= v < self.n):
                raise GraphError(f"edge ({u}, {v}) outside 0..{self.n - 1}")
            key = _pair(u, v)
            if key in clean:
                raise GraphError(f"duplicate edge {key}")
            clean[key] = TimingClass(cls)
        object.__setattr__(self, "links", clean)
        adj: dict[TimingClass, list[list[int]]] = {c: [[] for _ in range(self.n)] for c in TimingClass}
        for (u, v), cls in sorted(clean.items()):
            adj[cls][u].append(v)
            adj[cls][v].append(u)
        object.__setattr__(self, "_adj", adj)

    @classmethod
    def complete(cls, n: int, timing: TimingClass = TimingClass.SYNC) -> "TimedGraph":
        return cls(n, {p: timing for p in combinations(range(n), 2)})

    @classmethod
    def from_edges(cls, n: int, edges: Iterable, default: Optional[TimingClass] = None) -> "TimedGraph":
        """Build from ``(u, v, class)`` triples; unlisted pairs get `default`
        when one is given and stay unlinked otherwise."""
        links = {}
        for u, v, timing in edges:
            key = _pair(u, v)
            if key in links:
                raise GraphError(f"duplicate edge {key}")
            links[key] = TimingClass(timing)
        if default is not None:
            for p in combinations(range(n), 2):
                links.setdefault(p, TimingClass(default))
        return cls(n, links)

    def link_class(self, u: int, v: int) -> Optional[TimingClass]:
        return self.links.get(_pair(u, v))

    def is_complete(self) -> bool:
        return len(self.links) == self.n * (self.n - 1) // 2

    def neighbors(self, u: int, classes=SYNC_ONLY) -> Iterator[int]:
        for c in classes:
            yield from self._adj[c][u]

    def relabel(self, perm) -> "TimedGraph":
        """Graph with node ``u`` renamed ``perm[u]``."""
        return TimedGraph(self.n, {(perm[u], perm[v]): c for (u, v), c in self.links.items()})

    def edge_list(self) -> list[tuple[int, int, TimingClass]]:
        return [(u, v, c) for (u, v), c in sorted(self.links.items())]


@dataclass(frozen=True)
class ConditionVerdict:
    """Outcome of a condition check; `witness` is the first violating
    ``(F, A)`` (or ``(F,)`` for the component conditions) when it fails."""

    holds: bool
    witness: Optional[tuple] = None

    def __bool__(self) -> bool:
        return self.holds


def _check_node(g: TimedGraph, a: int) -> None:
    if not isinstance(a, int) or not 0 <= a < g.n:
        raise GraphError(f"invalid node id {a!r} for n={g.n}")


def _distances(g: TimedGraph, faulty, a: int, classes) -> dict[int, int]:
    # Faulty nodes may be reached but are never expanded, except the source.
    dist = {a: 0}
    queue = deque([a])
    while queue:
        u = queue.popleft()
        if u in faulty and u != a:
            continue
        for w in g.neighbors(u, classes):
            if w not in dist:
                dist[w] = dist[u] + 1
                queue.append(w)
    return dist


def sync_reachable(g: TimedGraph, faulty, a: int) -> set[int]:
    """Nodes reachable from `a` over synchronous links whose intermediate
    nodes are all outside `faulty`. Always contains `a`."""
    _check_node(g, a)
    return set(_distances(g, frozenset(faulty), a, SYNC_ONLY))


def set_reaches(g: TimedGraph, faulty, sources) -> set[int]:
    sources = list(sources)
    if not sources:
        raise GraphError("source set must be nonempty")
    faulty = frozenset(faulty)
    out: set[int] = set()
    for a in sources:
        _check_node(g, a)
        out.update(_distances(g, faulty, a, SYNC_ONLY))
    return out


def fault_sets(n: int, f: int, exact: bool = False) -> Iterator[frozenset]:
    """All fault sets of size at most `f` (or exactly `f`), smallest first."""
    sizes = [f] if exact else range(min(f, n) + 1)
    for size in sizes:
        for combo in combinations(range(n), size):
            yield frozenset(combo)


def _diameter(g: TimedGraph, f: int, correct_pairs_only: bool, fallback: bool, classes) -> int:
    if fallback:
        return g.n - 1
    if f > g.n:
        raise GraphError("f exceeds n")
    best = 0
    for F in fault_sets(g.n, f):
        for a in range(g.n):
            if correct_pairs_only and a in F:
                continue
            for b, k in _distances(g, F, a, classes).items():
                if correct_pairs_only and b in F:
                    continue
                best = max(best, k)
    # No connected pair at all: nothing to measure, use the agnostic bound.
    return best if best > 0 else g.n - 1


def sync_diameter(g: TimedGraph, f: int, correct_pairs_only: bool = False, fallback: bool = False) -> int:
    """Worst shortest synchronous-path length over fault sets of size <= f."""
    return _diameter(g, f, correct_pairs_only, fallback, SYNC_ONLY)


def psync_diameter(g: TimedGraph, f: int, correct_pairs_only: bool = False, fallback: bool = False) -> int:
    """Same as :func:`sync_diameter` but paths may use partially synchronous links."""
    return _diameter(g, f, correct_pairs_only, fallback, DIAMOND)


def check_cft_gps(g: TimedGraph, f: int) -> ConditionVerdict:
    """CFT solvability under granular partial synchrony.

    Every set of ``n - f`` nodes must synchronously reach at least ``f + 1``
    nodes, whichever ``<= f`` nodes crash. Larger sets reach supersets, so
    only the minimum size is enumerated.
    """
    n = g.n
    if not 0 <= f < n:
        raise GraphError(f"need 0 <= f < n, got f={f}, n={n}")
    for F in fault_sets(n, f):
        reach = [set(_distances(g, F, a, SYNC_ONLY)) for a in range(n)]
        for A in combinations(range(n), n - f):
            if len(set().union(*(reach[a] for a in A))) < f + 1:
                return ConditionVerdict(False, (tuple(sorted(F)), A))
    return ConditionVerdict(True)


def _require_bft(n: int, f: int) -> None:
    if f < 0 or n < 2 * f + 1:
        raise GraphError(f"BFT conditions need n >= 2f+1, got n={n}, f={f}")


def check_bft_gps(g: TimedGraph, f: int) -> ConditionVerdict:
    """BFT solvability under granular partial synchrony (``n >= 2f + 1``).

    Every set of ``n - 2f`` correct nodes must synchronously reach at least
    ``f + 1`` correct nodes.
    """
    n = g.n
    _require_bft(n, f)
    for F in fault_sets(n, f):
        correct = [x for x in range(n) if x not in F]
        reach = {a: set(_distances(g, F, a, SYNC_ONLY)) - F for a in correct}
        for A in combinations(correct, n - 2 * f):
            if len(set().union(*(reach[a] for a in A))) < f + 1:
                return ConditionVerdict(False, (tuple(sorted(F)), A))
    return ConditionVerdict(True)


def diamond_components(g: TimedGraph, faulty) -> list[set[int]]:
    """Connected components of the correct nodes over sync+psync links."""
    faulty = frozenset(faulty)
    seen: set[int] = set()
    comps = []
    for a in range(g.n):
        if a in faulty or a in seen:
            continue
        comp = {a}
        stack = [a]
        while stack:
            u = stack.pop()
            for w in g.neighbors(u, DIAMOND):
                if w not in faulty and w not in comp:
                    comp.add(w)
                    stack.append(w)
        seen |= comp
        comps.append(comp)
    return comps


def check_cft_gas_components(g: TimedGraph, f: int) -> ConditionVerdict:
    """Fewer than ``n - f`` correct nodes lie outside the largest
    sync+psync component, for every fault set of size <= f."""
    n = g.n
    if not 0 <= f < n:
        raise GraphError(f"need 0 <= f < n, got f={f}, n={n}")
    for F in fault_sets(n, f):
        sizes = [len(c) for c in diamond_components(g, F)]
        outside = sum(sizes) - max(sizes, default=0)
        if outside >= n - f:
            return ConditionVerdict(False, (tuple(sorted(F)),))
    return ConditionVerdict(True)


def check_cft_gas(g: TimedGraph, f: int) -> ConditionVerdict:
    """CFT solvability under granular asynchrony: both conditions."""
    first = check_cft_gps(g, f)
    if not first:
        return first
    return check_cft_gas_components(g, f)


def _has_diamond_source(g: TimedGraph, f: int, faulty) -> bool:
    faulty = frozenset(faulty)
    for a in range(g.n):
        if a in faulty:
            continue
        # All-correct path: faulty nodes are neither crossed nor counted.
        reach = {a}
        stack = [a]
        while stack:
            u = stack.pop()
            for w in g.neighbors(u, DIAMOND):
                if w not in faulty and w not in reach:
                    reach.add(w)
                    stack.append(w)
        if len(reach) - 1 >= f:
            return True
    return False


def check_bft_gas_sources(g: TimedGraph, f: int) -> ConditionVerdict:
    """Some correct node has sync+psync paths to ``f`` other correct nodes,
    for every fault set. All sizes ``<= f`` are enumerated."""
    _require_bft(g.n, f)
    for F in fault_sets(g.n, f):
        if not _has_diamond_source(g, f, F):
            return ConditionVerdict(False, (tuple(sorted(F)),))
    return ConditionVerdict(True)


def check_bft_gas(g: TimedGraph, f: int) -> ConditionVerdict:
    first = check_bft_gps(g, f)
    if not first:
        return first
    return check_bft_gas_sources(g, f)


def check_diamond_f_source(g: TimedGraph, f: int, faulty) -> bool:
    """Whether a correct node has fault-free sync+psync paths to at least
    `f` other correct nodes when `faulty` have failed."""
    faulty = frozenset(faulty)
    if len(faulty) > f:
        raise GraphError(f"{len(faulty)} faulty nodes exceed f={f}")
    return _has_diamond_source(g, f, faulty)


CHECKERS = {
    "cft-gps": check_cft_gps,
    "cft-gas": check_cft_gas,
    "bft-gps": check_bft_gps,
    "bft-gas": check_bft_gas,
}


def figure4_graph() -> TimedGraph:
    """Four nodes A..D (0..3) on a synchronous path, every other link asynchronous."""
    return TimedGraph.from_edges(4, [(0, 1, "sync"), (1, 2, "sync"), (2, 3, "sync")], default=TimingClass.ASYNC)
