"""Post-hoc trace analysis and the library of named scenarios.

Checks work on any :class:`~granular.simnet.Trace`, including one parsed back
from its text form, because they only read record kinds and detail strings.
Evidence is a tuple of record indices; rendered, they become 1-based line
numbers of the trace file.
"""

from __future__ import annotations

import re
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional

from .adversary import AdversaryScript, Corruption, equivocating_leader, split_brain_delay_script
from .graph import TimedGraph, TimingClass, figure4_graph
from .scenario import Scenario
from .simnet import Trace, within_contract

PASS, FAIL, UNDETERMINED = "pass", "fail", "undetermined"


@dataclass(frozen=True)
class Verdict:
    property: str
    outcome: str
    evidence: tuple = ()
    reason: str = ""

    @property
    def passed(self) -> bool:
        return self.outcome == PASS

    def render(self) -> str:
        refs = ",".join(f"L{i + 1}" for i in self.evidence) or "-"
        return f"{self.property}\t{self.outcome}\t{refs}"


def render_verdicts(verdicts) -> str:
    return "".join(v.render() + "\n" for v in verdicts)


def _decides(trace: Trace, nodes=None):
    return [(i, r) for i, r in enumerate(trace.records)
            if r.kind == "decide" and (nodes is None or r.node in nodes)]


def check_agreement(trace: Trace, mode: str = "uniform") -> Verdict:
    """Uniform mode counts every decide, including ones by nodes that crash
    later; correct-only ignores nodes that were ever corrupted."""
    if mode not in ("uniform", "correct-only"):
        raise ValueError(f"unknown agreement mode {mode!r}")
    nodes = None if mode == "uniform" else set(range(trace.n)) - set(trace.corrupted)
    first = None
    for i, r in _decides(trace, nodes):
        if first is None:
            first = (i, r)
        elif r.detail != first[1].detail:
            return Verdict("agreement", FAIL, (first[0], i),
                           f"node {first[1].node} decided {first[1].detail}, node {r.node} decided {r.detail}")
    return Verdict("agreement", PASS)


def check_validity(trace: Trace, inputs, mode: str = "unanimity", correct_only: bool = False) -> Verdict:
    """`inputs` maps node -> input (or is a list indexed by node).

    unanimity: when all considered inputs are equal, every decide must be
    that value. external: every decided value is some node's input.
    `correct_only` drops never-corrupted nodes from both inputs and decides.
    """
    if mode not in ("unanimity", "external"):
        raise ValueError(f"unknown validity mode {mode!r}")
    if not isinstance(inputs, dict):
        inputs = dict(enumerate(inputs))
    nodes = set(inputs)
    if correct_only:
        nodes -= set(trace.corrupted)
    considered = {inputs[i] for i in nodes}
    if mode == "unanimity":
        if len(considered) != 1:
            return Verdict("validity", PASS, reason="inputs not unanimous")
        allowed = considered
    else:
        allowed = set(inputs.values())
    for i, r in _decides(trace, nodes):
        if r.detail not in allowed:
            return Verdict("validity", FAIL, (i,), f"node {r.node} decided {r.detail}")
    return Verdict("validity", PASS)


def check_termination(trace: Trace, deadline: Optional[int] = None) -> Verdict:
    decided = {r.node: (i, r) for i, r in _decides(trace)}
    late = [decided[x][0] for x in trace.correct_nodes()
            if x in decided and deadline is not None and decided[x][1].time > deadline]
    missing = [x for x in trace.correct_nodes() if x not in decided]
    end = next((i for i in range(len(trace.records) - 1, -1, -1)
                if trace.records[i].kind == "state_note" and trace.records[i].node < 0), None)
    if late:
        return Verdict("termination", FAIL, tuple(late), f"decided after deadline {deadline}")
    if not missing:
        return Verdict("termination", PASS)
    evidence = (end,) if end is not None else ()
    if trace.end_reason == "horizon" and trace.held > 0:
        return Verdict("termination", UNDETERMINED, evidence,
                       f"nodes {missing} undecided with {trace.held} messages in flight")
    return Verdict("termination", FAIL, evidence, f"nodes {missing} never decided")


_SEND = re.compile(r"env=(\d+) to=(\d+) seq=(\d+) at=(\d+) ")
_DELIVER = re.compile(r"env=(\d+) from=(\d+) seq=(\d+) ")


def check_contracts(trace: Trace, graph: TimedGraph, delta: int, gst: int) -> Verdict:
    """Every envelope is scheduled inside its link's delay contract."""
    for i, r in enumerate(trace.records):
        if r.kind != "send":
            continue
        _, to, _, at = (int(x) for x in _SEND.match(r.detail).groups())
        link = None if to == r.node else graph.link_class(r.node, to)
        if not within_contract(link, r.time, at, delta, gst):
            return Verdict("contracts", FAIL, (i,), f"delivery at {at} breaks the {link} contract")
    return Verdict("contracts", PASS)


def check_fifo(trace: Trace) -> Verdict:
    """Deliveries on each directed link happen in send order."""
    last: dict = {}
    for i, r in enumerate(trace.records):
        if r.kind != "deliver":
            continue
        _, sender, seq = (int(x) for x in _DELIVER.match(r.detail).groups())
        key = (sender, r.node)
        if key in last and seq <= last[key][1]:
            return Verdict("fifo", FAIL, (last[key][0], i), f"link {sender}->{r.node} reordered")
        last[key] = (i, seq)
    return Verdict("fifo", PASS)


_LOCK = re.compile(r"lock view=(\d+) value=(\S+)")


def check_lock_monotonicity(trace: Trace) -> Verdict:
    """Lock views never go down at a never-corrupted node."""
    last: dict = {}
    for i, r in enumerate(trace.records):
        if r.kind != "state_note" or r.node in trace.corrupted:
            continue
        m = _LOCK.match(r.detail)
        if not m:
            continue
        view = int(m.group(1))
        if r.node in last and view < last[r.node][1]:
            return Verdict("lock-monotonicity", FAIL, (last[r.node][0], i), f"node {r.node} lock went back")
        last[r.node] = (i, view)
    return Verdict("lock-monotonicity", PASS)


_VOTE1 = re.compile(r"(\d+):Vote1\(view=(\d+),value=([^,)]+)\)")


def check_vote1_uniqueness(trace: Trace, quorum: int) -> Verdict:
    """No view has quorum-many distinct Vote1 origins for two values."""
    origins = defaultdict(set)
    where = {}
    for i, r in enumerate(trace.records):
        if r.kind != "send":
            continue
        for origin, view, value in _VOTE1.findall(r.detail):
            key = (int(view), value)
            origins[key].add(int(origin))
            if len(origins[key]) >= quorum:
                where.setdefault(key, i)
    full = defaultdict(list)
    for (view, value) in where:
        full[view].append(value)
    for view, values in sorted(full.items()):
        if len(values) > 1:
            a, b = sorted(values)[:2]
            return Verdict("vote1-uniqueness", FAIL, (where[(view, a)], where[(view, b)]),
                           f"conflicting Vote1 certificates in view {view}")
    return Verdict("vote1-uniqueness", PASS)


def evaluate(scenario: Scenario, trace: Trace) -> list[Verdict]:
    """The standard verdict set for a scenario run."""
    verdicts = []
    if scenario.byzantine:
        verdicts.append(check_agreement(trace, "correct-only"))
        mode = "unanimity" if scenario.unanimity_prephase else "external"
        verdicts.append(check_validity(trace, scenario.inputs, mode, correct_only=True))
    else:
        verdicts.append(check_agreement(trace, "uniform"))
        verdicts.append(check_validity(trace, scenario.inputs, "unanimity"))
    verdicts.append(check_termination(trace))
    verdicts.append(check_contracts(trace, scenario.graph, scenario.delta, scenario.gst))
    verdicts.append(check_fifo(trace))
    verdicts.append(check_lock_monotonicity(trace))
    if scenario.byzantine:
        verdicts.append(check_vote1_uniqueness(trace, scenario.n - scenario.f))
    return verdicts


def meets_expectations(verdicts, expected: dict) -> bool:
    """Listed properties must match; everything else must pass."""
    return all(v.outcome == expected.get(v.property, PASS) for v in verdicts)


def revalidate(verdict: Verdict, trace: Trace) -> bool:
    """Re-check a failing agreement or validity verdict from its evidence
    records alone."""
    records = [trace.records[i] for i in verdict.evidence]
    if verdict.property == "agreement":
        return (len(records) == 2 and all(r.kind == "decide" for r in records)
                and records[0].detail != records[1].detail)
    if verdict.property == "validity":
        return len(records) == 1 and records[0].kind == "decide"
    raise ValueError(f"no re-validation rule for {verdict.property}")


# -- named scenarios ---------------------------------------------------------------


@dataclass
class NamedScenario:
    identifier: str
    scenario: Scenario
    expected: dict = field(default_factory=dict)


def _named(identifier: str, expected: dict, **kwargs) -> NamedScenario:
    scenario = Scenario(name=identifier, expected=dict(expected), **kwargs)
    scenario.validate()
    return NamedScenario(identifier, scenario, dict(expected))


_HAPPY = {"agreement": PASS, "validity": PASS, "termination": PASS}
_FAR = 10**6  # stabilization later than any horizon used here


def scenario_library() -> list[NamedScenario]:
    S, P, X = TimingClass.SYNC, TimingClass.PSYNC, TimingClass.ASYNC
    lib = []
    lib.append(_named(
        "cft-gps-happy", _HAPPY, protocol="cft-gps", n=4, f=2,
        graph=TimedGraph.complete(4), inputs=["a", "a", "b", "b"], delta=10, horizon=400))
    lib.append(_named(
        "cft-gps-crash-leader", _HAPPY, protocol="cft-gps", n=4, f=2,
        graph=TimedGraph.complete(4), inputs=["a", "b", "a", "b"], delta=10, horizon=2000,
        adversary=AdversaryScript(crashes=[(1, 0), (2, 45)])))

    g = TimedGraph.complete(4, P)
    lib.append(_named(
        "cft-gps-split-brain", {"agreement": FAIL, "validity": PASS, "termination": PASS},
        protocol="cft-gps", n=4, f=2, graph=g, inputs=["x", "x", "y", "y"],
        delta=10, gst=_FAR, horizon=2000,
        adversary=AdversaryScript(holds=split_brain_delay_script(g, ({0, 1}, {2, 3}), _FAR, _FAR))))

    lib.append(_named(
        "cft-gas-fig4-liveness", _HAPPY, protocol="cft-gas", n=4, f=2, graph=figure4_graph(),
        inputs=["a", "b", "b", "a"], delta=10, horizon=5000,
        adversary=AdversaryScript(crashes=[(1, 0)], async_cap=80)))

    g = TimedGraph.from_edges(5, [(u, v, P) for u in range(4) for v in range(u + 1, 4)], default=X)
    lib.append(_named(
        "cft-gas-async-edges", _HAPPY, protocol="cft-gas", n=5, f=2, graph=g,
        inputs=["a", "b", "a", "b", "c"], delta=10, gst=50, horizon=5000,
        adversary=AdversaryScript(crashes=[(0, 0)], async_cap=300)))

    lib.append(_named(
        "bft-gps-happy", _HAPPY, protocol="bft-gps", n=4, f=1,
        graph=TimedGraph.complete(4), inputs=["a", "a", "b", "b"], delta=10, horizon=400))
    lib.append(_named(
        "bft-gps-equivocation", _HAPPY, protocol="bft-gps", n=4, f=1,
        graph=TimedGraph.complete(4), inputs=["a", "b", "a", "b"], delta=10, horizon=2000,
        adversary=AdversaryScript(corruptions=[equivocating_leader(1, 1, "a", "b", {0, 1})])))

    g = TimedGraph.complete(5, P)
    dual = tuple(sorted({"side_a": "0,1", "side_c": "4", "input_a": "x", "input_c": "y"}.items()))
    lib.append(_named(
        "bft-gps-split-brain", {"agreement": FAIL, "validity": PASS, "termination": PASS},
        protocol="bft-gps", n=5, f=2, graph=g, inputs=["x", "x", "x", "y", "y"],
        delta=10, gst=_FAR, horizon=3000,
        adversary=AdversaryScript(
            corruptions=[Corruption(2, 0, "dual-personality", dual), Corruption(3, 0, "dual-personality", dual)],
            holds=split_brain_delay_script(g, ({0, 1}, {4}), _FAR, _FAR))))

    g = TimedGraph.from_edges(4, [(0, 1, S), (0, 2, S), (1, 2, S)], default=X)
    lib.append(_named(
        "bft-gas-no-false-blame", _HAPPY, protocol="bft-gas", n=4, f=1, graph=g,
        inputs=["a", "b", "a", "b"], delta=10, horizon=5000,
        adversary=AdversaryScript(async_cap=300)))

    lib.append(_named(
        "bft-unanimity", _HAPPY, protocol="bft-gps", unanimity_prephase=True, n=4, f=1,
        graph=TimedGraph.complete(4), inputs=["x", "y", "x", "x"], delta=10, horizon=2000,
        adversary=AdversaryScript(corruptions=[Corruption(1, 0, "stale-lock-proposer", (("value", "y"),))])))
    return lib


def library_by_name() -> dict[str, NamedScenario]:
    return {s.identifier: s for s in scenario_library()}


# -- fuzz sweeps -------------------------------------------------------------------

SAFETY = ("agreement", "validity")


@dataclass
class FuzzViolation:
    seed: int
    index: int
    property: str
    detail: str

    def render(self) -> str:
        return f"seed={self.seed}\tindex={self.index}\t{self.property}\t{self.detail}"


def fuzz_sweep(seed: int, protocol: str, count: int, bounds=None) -> list[FuzzViolation]:
    """Run `count` fuzzed scenarios and collect safety violations; a run that
    raises (contract breach, forgery, protocol crash) is a violation too."""
    from .adversary import FuzzBounds, fuzz_one

    bounds = bounds or FuzzBounds()
    found = []
    for index in range(count):
        scenario = fuzz_one(seed, index, protocol, bounds)
        try:
            trace = scenario.run()
        except Exception as exc:  # reported, not raised: the sweep keeps going
            found.append(FuzzViolation(seed, index, "run", f"{type(exc).__name__}: {exc}"))
            continue
        for v in evaluate(scenario, trace):
            if v.property in SAFETY + ("contracts", "fifo", "vote1-uniqueness") and v.outcome == FAIL:
                found.append(FuzzViolation(seed, index, v.property, v.reason))
    return found
