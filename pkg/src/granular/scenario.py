"""Scenario values, their text format, and turning them into runs.

The format is line oriented. Top-level lines are ``key value...``; the
sections ``[edges]``, ``[adversary]`` and ``[expected]`` follow. ``#`` starts
a comment. Example::

    protocol cft-gps
    n 4
    f 2
    delta 10
    inputs a a b b
    [edges]
    0 1 sync
    ...
    [adversary]
    policy honest
    crash 1 0
    [expected]
    agreement pass
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Optional, Union

from .adversary import AdversaryError, AdversaryScript, Corruption, make_behavior
from .consensus_bft import BftNode
from .consensus_cft import CftNode, ProtocolParams
from .graph import GraphError, TimedGraph, TimingClass, psync_diameter, sync_diameter
from .simnet import Simulator, Trace

PROTOCOLS = ("cft-gps", "cft-gas", "bft-gps", "bft-gas")


class ScenarioFormatError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


DiameterMode = Union[str, int]  # "computed" | "fallback" | explicit value


@dataclass
class Scenario:
    protocol: str
    n: int
    f: int
    graph: TimedGraph
    inputs: list
    delta: int = 10
    gst: int = 0
    horizon: int = 1000
    sigma: Fraction = Fraction(1)
    d_mode: DiameterMode = "computed"
    dprime_mode: DiameterMode = "computed"
    unanimity_prephase: bool = False
    adversary: AdversaryScript = field(default_factory=AdversaryScript)
    seed: int = 0
    expected: dict = field(default_factory=dict)
    name: str = ""

    @property
    def byzantine(self) -> bool:
        return self.protocol.startswith("bft")

    @property
    def asynchronous(self) -> bool:
        return self.protocol.endswith("gas")

    def validate(self) -> None:
        if self.protocol not in PROTOCOLS:
            raise ScenarioFormatError(f"unknown protocol {self.protocol!r}")
        if self.graph.n != self.n:
            raise ScenarioFormatError("graph size does not match n")
        if not self.graph.is_complete():
            raise ScenarioFormatError("edge list must cover every pair of nodes")
        if not 0 <= self.f < self.n:
            raise ScenarioFormatError(f"need 0 <= f < n, got f={self.f}, n={self.n}")
        if self.byzantine and self.n < 2 * self.f + 1:
            raise ScenarioFormatError(f"byzantine protocols need n >= 2f+1, got n={self.n}, f={self.f}")
        if self.unanimity_prephase and not self.byzantine:
            raise ScenarioFormatError("the unanimity pre-phase only applies to bft protocols")
        if len(self.inputs) != self.n:
            raise ScenarioFormatError(f"expected {self.n} inputs, got {len(self.inputs)}")
        if self.sigma < 1 or self.delta < 1 or self.gst < 0 or self.horizon < 1:
            raise ScenarioFormatError("need sigma >= 1, delta >= 1, gst >= 0, horizon >= 1")
        try:
            self.adversary.validate(self.graph, self.f, self.delta, self.byzantine)
        except AdversaryError as exc:
            raise ScenarioFormatError(str(exc)) from exc

    # -- diameters and parameters ------------------------------------------------

    def _diameter(self, mode, fn) -> int:
        if mode == "computed":
            return fn(self.graph, self.f, correct_pairs_only=self.byzantine)
        if mode == "fallback":
            return self.n - 1
        return int(mode)

    def diameters(self) -> tuple[int, int]:
        return (self._diameter(self.d_mode, sync_diameter),
                self._diameter(self.dprime_mode, psync_diameter))

    def params(self) -> ProtocolParams:
        d, d_prime = self.diameters()
        return ProtocolParams(self.n, self.f, self.delta, d, d_prime)

    # -- running ---------------------------------------------------------------

    def simulator(self) -> Simulator:
        self.validate()
        params = self.params()
        if self.byzantine:
            nodes = {i: BftNode(i, params, self.inputs[i], self.asynchronous, self.unanimity_prephase)
                     for i in range(self.n)}
        else:
            nodes = {i: CftNode(i, params, self.inputs[i], self.asynchronous) for i in range(self.n)}
        values = tuple(sorted(set(self.inputs)))
        shared: dict = {}
        corruptions = [(c.node, c.time, make_behavior(c, values, shared)) for c in self.adversary.corruptions]
        return Simulator(
            self.graph, nodes, delta=self.delta, horizon=self.horizon, gst=self.gst,
            policy=self.adversary.build_policy(), sigma=self.sigma, seed=self.seed,
            crashes=self.adversary.crashes, corruptions=corruptions,
        )

    def run(self) -> Trace:
        return self.simulator().run()


def run_scenario(scenario: Scenario, horizon: Optional[int] = None) -> Trace:
    if horizon is not None:
        scenario = replace(scenario, horizon=horizon)
    return scenario.run()


# -- text format -------------------------------------------------------------------


def _format_sigma(s: Fraction) -> str:
    return str(s.numerator) if s.denominator == 1 else f"{s.numerator}/{s.denominator}"


def _format_group(nodes) -> str:
    return ",".join(str(x) for x in sorted(nodes))


def dumps(s: Scenario) -> str:
    out = []
    if s.name:
        out.append(f"name {s.name}")
    out += [
        f"protocol {s.protocol}",
        f"unanimity_prephase {'true' if s.unanimity_prephase else 'false'}",
        f"n {s.n}",
        f"f {s.f}",
        f"delta {s.delta}",
        f"gst {s.gst}",
        f"horizon {s.horizon}",
        f"sigma {_format_sigma(s.sigma)}",
        f"d_mode {s.d_mode}",
        f"dprime_mode {s.dprime_mode}",
        f"seed {s.seed}",
        "inputs " + " ".join(s.inputs),
        "[edges]",
    ]
    out += [f"{u} {v} {c.value}" for u, v, c in s.graph.edge_list()]
    a = s.adversary
    out.append("[adversary]")
    out.append(f"policy {a.policy}")
    for key in ("psync_cap", "async_cap", "async_release"):
        if getattr(a, key) is not None:
            out.append(f"{key} {getattr(a, key)}")
    for node, t in a.crashes:
        out.append(f"crash {node} {t}")
    for c in a.corruptions:
        out.append(" ".join([f"corrupt {c.node} {c.time} {c.behavior}"] + [f"{k}={v}" for k, v in c.params]))
    for ga, gb, release in a.holds:
        out.append(f"hold {_format_group(ga)} {_format_group(gb)} {release}")
    for (origin, sender, recipient, seq), delay in sorted(a.overrides.items()):
        out.append(f"override {origin} {sender} {recipient} {seq} {delay}")
    if s.expected:
        out.append("[expected]")
        out += [f"{prop} {outcome}" for prop, outcome in sorted(s.expected.items())]
    return "\n".join(out) + "\n"


def _mode(text: str) -> DiameterMode:
    if text in ("computed", "fallback"):
        return text
    value = int(text)
    if value < 0:
        raise ValueError("diameter must be non-negative")
    return value


def _group(text: str) -> frozenset:
    return frozenset(int(x) for x in text.split(",") if x)


_SCALARS = {
    "name": str, "protocol": str, "n": int, "f": int, "delta": int, "gst": int, "horizon": int,
    "seed": int, "sigma": Fraction, "d_mode": _mode, "dprime_mode": _mode,
}
_OUTCOMES = ("pass", "fail", "undetermined")


def loads(text: str) -> Scenario:
    """Parse the scenario text format; errors carry the offending line."""
    top: dict = {}
    edges: list = []
    script = AdversaryScript()
    expected: dict = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            section = line.strip("[]").strip()
            if section not in ("edges", "adversary", "expected"):
                raise ScenarioFormatError(f"unknown section [{section}]", lineno)
            continue
        words = line.split()
        key, args = words[0], words[1:]
        try:
            if section is None:
                if key == "inputs":
                    top["inputs"] = args
                elif key == "unanimity_prephase":
                    if args != ["true"] and args != ["false"]:
                        raise ValueError("expected true or false")
                    top[key] = args[0] == "true"
                elif key in _SCALARS:
                    if len(args) != 1:
                        raise ValueError(f"{key} takes one value")
                    if key in top:
                        raise ValueError(f"duplicate key {key}")
                    top[key] = _SCALARS[key](args[0])
                else:
                    raise ValueError(f"unknown key {key!r}")
            elif section == "edges":
                u, v, cls = words
                edges.append((int(u), int(v), TimingClass(cls)))
            elif section == "adversary":
                _adversary_line(script, key, args)
            else:
                (outcome,) = args
                if outcome not in _OUTCOMES:
                    raise ValueError(f"unknown outcome {outcome!r}")
                expected[key] = outcome
        except ScenarioFormatError:
            raise
        except (ValueError, GraphError) as exc:
            raise ScenarioFormatError(str(exc) or f"malformed line {raw.strip()!r}", lineno) from exc
    for key in ("protocol", "n", "f", "inputs"):
        if key not in top:
            raise ScenarioFormatError(f"missing required key {key!r}")
    try:
        graph = TimedGraph.from_edges(top["n"], edges)
    except GraphError as exc:
        raise ScenarioFormatError(str(exc)) from exc
    scenario = Scenario(graph=graph, adversary=script, expected=expected, **top)
    scenario.validate()
    return scenario


def _adversary_line(script: AdversaryScript, key: str, args: list) -> None:
    if key == "policy":
        (script.policy,) = args
    elif key in ("psync_cap", "async_cap", "async_release"):
        (value,) = args
        setattr(script, key, int(value))
    elif key == "crash":
        node, t = args
        script.crashes.append((int(node), int(t)))
    elif key == "corrupt":
        node, t, behavior, *opts = args
        params = []
        for opt in opts:
            k, sep, v = opt.partition("=")
            if not sep:
                raise ValueError(f"behavior option {opt!r} is not key=value")
            params.append((k, v))
        script.corruptions.append(Corruption(int(node), int(t), behavior, tuple(sorted(params))))
    elif key == "hold":
        ga, gb, release = args
        script.holds.append((_group(ga), _group(gb), int(release)))
    elif key == "override":
        origin, sender, recipient, seq, delay = (int(x) for x in args)
        script.overrides[(origin, sender, recipient, seq)] = delay
    else:
        raise ValueError(f"unknown adversary key {key!r}")


def load(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())
