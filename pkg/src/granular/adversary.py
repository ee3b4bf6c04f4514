"""Fault injection and scheduling strategies.

Byzantine behaviors wrap the corrupted node's honest state machine (so they
inherit everything it has already received) and rewrite or add to its
actions. They only ever sign with their own id or forward messages they have
received; the simulator enforces this independently.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from . import consensus_bft as bft
from .graph import TimedGraph, TimingClass
from .simnet import (
    Decide,
    Deliver,
    HonestDelays,
    Init,
    MaxDelays,
    Note,
    RandomDelays,
    ScriptedDelays,
    Send,
    SetTimer,
    CancelTimer,
    Signed,
    TimerFire,
)


class AdversaryError(ValueError):
    pass


@dataclass(frozen=True)
class Corruption:
    node: int
    time: int
    behavior: str
    params: tuple = ()  # sorted (key, value) string pairs

    @property
    def options(self) -> dict:
        return dict(self.params)


@dataclass
class AdversaryScript:
    crashes: list = field(default_factory=list)  # (node, time)
    corruptions: list = field(default_factory=list)  # Corruption
    policy: str = "honest"  # honest | max | random
    psync_cap: Optional[int] = None
    async_cap: Optional[int] = None
    async_release: Optional[int] = None
    holds: list = field(default_factory=list)  # (group_a, group_b, release)
    overrides: dict = field(default_factory=dict)  # (origin, sender, recipient, seq) -> delay

    def faulty(self) -> set[int]:
        return {node for node, _ in self.crashes} | {c.node for c in self.corruptions}

    def validate(self, graph: TimedGraph, f: int, delta: int, byzantine: bool) -> None:
        faulty = self.faulty()
        if len(faulty) > f:
            raise AdversaryError(f"{len(faulty)} faulty nodes exceed f={f}")
        if any(not 0 <= x < graph.n for x in faulty):
            raise AdversaryError("faulty node id out of range")
        if self.corruptions and not byzantine:
            raise AdversaryError("crash-fault protocols admit crashes only")
        if self.policy not in ("honest", "max", "random"):
            raise AdversaryError(f"unknown delay policy {self.policy!r}")
        for c in self.corruptions:
            if c.behavior not in BEHAVIORS:
                raise AdversaryError(f"unknown behavior {c.behavior!r}")
        for (origin, sender, recipient, seq), delay in self.overrides.items():
            link = graph.link_class(sender, recipient)
            if delay < 1 or (link is TimingClass.SYNC and delay > delta):
                raise AdversaryError(f"override delay {delay} breaks the {link} contract on {sender}->{recipient}")
        for group_a, group_b, _ in self.holds:
            for a in group_a:
                for b in group_b:
                    if graph.link_class(a, b) is TimingClass.SYNC:
                        raise AdversaryError(f"cannot hold traffic on synchronous link {a}-{b}")

    def build_policy(self):
        if self.policy == "max":
            base = MaxDelays(self.async_release)
        elif self.policy == "random":
            base = RandomDelays(self.async_cap or 50)
        else:
            base = HonestDelays(self.psync_cap, self.async_cap)
        if self.holds or self.overrides:
            return ScriptedDelays(base, dict(self.overrides), list(self.holds))
        return base


# -- Byzantine behaviors -------------------------------------------------------


class Behavior:
    name = "behavior"

    def attach(self, node_id: int, honest, sim) -> None:
        self.id = node_id
        self.honest = honest
        self.params = honest.params
        self.rng = random.Random(f"{sim.seed}/{node_id}/{self.name}")

    def step(self, event) -> list:
        return [a for a in self.rewrite(self.honest.step(event)) if not isinstance(a, Decide)]

    def rewrite(self, actions: list) -> list:
        return actions


class Silent(Behavior):
    name = "silent"

    def step(self, event) -> list:
        return []


class EquivocatingLeader(Behavior):
    """Split the proposal of `view` between `group_a` and everybody else."""

    name = "equivocating-leader"

    def __init__(self, view: int = 1, value_a: str = "a", value_b: str = "b", group_a=()):
        self.view = view
        self.value_a = value_a
        self.value_b = value_b
        self.group_a = frozenset(group_a)

    def rewrite(self, actions):
        out = []
        for act in actions:
            msg = act.msg if isinstance(act, Send) else None
            if isinstance(msg, bft.Propose) and msg.view == self.view:
                S = msg.justification
                top = bft.highest_lock(S)
                if top is None:
                    first, second = self.value_a, self.value_b
                else:
                    # Only one side can be justified; the other is rejected.
                    first = top.value
                    second = self.value_b if self.value_b != top.value else self.value_a
                for r in range(self.params.n):
                    value = first if r in self.group_a else second
                    out.append(Send(bft.Propose(msg.view, value, S), to=r))
            else:
                out.append(act)
        return out


class StaleLockProposer(Behavior):
    """As leader, propose `value` regardless of the locks reported in S."""

    name = "stale-lock-proposer"

    def __init__(self, value: Optional[str] = None):
        self.value = value

    def rewrite(self, actions):
        out = []
        for act in actions:
            msg = act.msg if isinstance(act, Send) else None
            if isinstance(msg, bft.Propose):
                value = self.value if self.value is not None else self.honest.input
                act = Send(bft.Propose(msg.view, value, msg.justification), to=act.to)
            out.append(act)
        return out


class RandomValid(Behavior):
    """Honest behavior sprinkled with random own-origin protocol messages."""

    name = "random-valid"

    def __init__(self, values=("a", "b"), rate: float = 0.2):
        self.values = tuple(values)
        self.rate = float(rate)

    def rewrite(self, actions):
        out = list(actions)
        if self.rng.random() < self.rate:
            rng = self.rng
            v = max(self.honest.view, 1) + rng.randint(0, 1)
            value = rng.choice(self.values)
            msg = rng.choice([
                bft.Vote1(v, value),
                bft.Vote2(v, value),
                bft.ViewChange(v),
                bft.Status(v, None),
                bft.Input(value),
            ])
            to = rng.choice([None] + list(range(self.params.n)))
            out.append(Send(msg, to=to))
        return out


class DualPersonality(Behavior):
    """One member of a coordinated faulty set that runs two honest
    personalities: one with `input_a` facing `side_a`, one with `input_c`
    facing `side_c`. The faulty members talk to each other in both worlds.

    Members sharing the same options share one coordinator, which remembers
    which world each of their messages belongs to.
    """

    name = "dual-personality"

    def __init__(self, side_a=(), side_c=(), input_a="a", input_c="b", coordinator=None):
        self.side_a = frozenset(side_a)
        self.side_c = frozenset(side_c)
        self.input_a = input_a
        self.input_c = input_c
        self.coord = coordinator if coordinator is not None else {"members": set(), "tags": {}}

    def attach(self, node_id, honest, sim):
        super().attach(node_id, honest, sim)
        self.coord["members"].add(node_id)
        kwargs = dict(asynchronous=honest.asynchronous, prephase=honest.prephase)
        self.personas = {
            "a": bft.BftNode(node_id, honest.params, self.input_a, **kwargs),
            "c": bft.BftNode(node_id, honest.params, self.input_c, **kwargs),
        }

    def _world_members(self, world):
        side = self.side_a if world == "a" else self.side_c
        return side | self.coord["members"]

    def step(self, event):
        out = []
        if isinstance(event, Init):
            for world in ("a", "c"):
                out += self._route(world, self.personas[world].step(event))
        elif isinstance(event, Deliver):
            if event.sender in self.side_a:
                worlds = {"a"}
            elif event.sender in self.side_c:
                worlds = {"c"}
            else:
                worlds = self.coord["tags"].get(event.signed, {"a", "c"})
            for world in sorted(worlds):
                out += self._route(world, self.personas[world].step(event))
        elif isinstance(event, TimerFire):
            world, _, inner = event.timer_id.partition("|")
            if world in self.personas:  # timers left over from the honest node are ignored
                out += self._route(world, self.personas[world].step(TimerFire(inner)))
        return out

    def _route(self, world, actions):
        out = []
        members = self._world_members(world)
        for act in actions:
            if isinstance(act, Send):
                signed = act.msg if isinstance(act.msg, Signed) else Signed(self.id, act.msg)
                self.coord["tags"].setdefault(signed, set()).add(world)
                targets = range(self.params.n) if act.to is None else (act.to,)
                out += [Send(signed, to=r) for r in targets if r in members]
            elif isinstance(act, SetTimer):
                out.append(SetTimer(f"{world}|{act.timer_id}", act.duration))
            elif isinstance(act, CancelTimer):
                out.append(CancelTimer(f"{world}|{act.timer_id}"))
            elif isinstance(act, Note):
                out.append(Note(f"{act.text} world={world}"))
        return out


BEHAVIORS = {
    cls.name: cls for cls in (Silent, EquivocatingLeader, StaleLockProposer, RandomValid, DualPersonality)
}


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x != ""]


def make_behavior(corruption: Corruption, values=("a", "b"), shared: Optional[dict] = None) -> Behavior:
    """Instantiate a named behavior from its string options.

    `shared` is per-run state; dual-personality members with identical
    options coordinate through it."""
    opts = corruption.options
    name = corruption.behavior
    if name == "silent":
        return Silent()
    if name == "equivocating-leader":
        return EquivocatingLeader(
            int(opts.get("view", 1)), opts.get("value_a", values[0]),
            opts.get("value_b", values[-1]), _ints(opts.get("group_a", "")))
    if name == "stale-lock-proposer":
        return StaleLockProposer(opts.get("value"))
    if name == "random-valid":
        pool = opts["values"].split(",") if "values" in opts else list(values)
        return RandomValid(pool, float(opts.get("rate", 0.2)))
    if name == "dual-personality":
        return DualPersonality(
            _ints(opts.get("side_a", "")), _ints(opts.get("side_c", "")),
            opts.get("input_a", values[0]), opts.get("input_c", values[-1]),
            coordinator=(shared if shared is not None else {}).setdefault(
                ("dual-personality", corruption.params), {"members": set(), "tags": {}}))
    raise AdversaryError(f"unknown behavior {name!r}")


def equivocating_leader(node: int, view: int, val_a: str, val_b: str, group_a, time: int = 0) -> Corruption:
    return Corruption(node, time, "equivocating-leader", tuple(sorted({
        "view": str(view), "value_a": val_a, "value_b": val_b,
        "group_a": ",".join(map(str, sorted(group_a))),
    }.items())))


# -- delay scripts ---------------------------------------------------------------


def split_brain_delay_script(graph: TimedGraph, partition, release_time: int, gst: int = 0) -> list:
    """Hold all traffic between the two sides of `partition` until
    `release_time`. Rejected when a synchronous link crosses the partition."""
    side_a, side_c = (frozenset(x) for x in partition)
    if side_a & side_c:
        raise AdversaryError("partition sides overlap")
    for a in side_a:
        for c in side_c:
            cls = graph.link_class(a, c)
            if cls is TimingClass.SYNC:
                raise AdversaryError(f"synchronous link {a}-{c} crosses the partition")
            if cls is TimingClass.PSYNC and release_time < gst:
                raise AdversaryError("release before GST on a partially synchronous link")
    return [(side_a, side_c, release_time)]


# -- fuzzing ---------------------------------------------------------------------

_BYZ = ("silent", "equivocating-leader", "stale-lock-proposer", "random-valid")


@dataclass(frozen=True)
class FuzzBounds:
    min_n: int = 3
    max_n: int = 6
    max_delta: int = 10
    max_gst_deltas: int = 20
    horizon_deltas: int = 150


def _random_graph(rng: random.Random, n: int, classes, p_sync: float) -> TimedGraph:
    links = {}
    for u in range(n):
        for v in range(u + 1, n):
            if rng.random() < p_sync:
                links[(u, v)] = TimingClass.SYNC
            else:
                links[(u, v)] = rng.choice(classes)
    return TimedGraph(n, links)


def fuzz_one(seed: int, index: int, protocol: str, bounds: FuzzBounds = FuzzBounds()):
    """The `index`-th fuzzed scenario of the stream for `seed`."""
    from .graph import CHECKERS
    from .scenario import Scenario

    rng = random.Random(f"fuzz/{protocol}/{seed}/{index}")
    byzantine = protocol.startswith("bft")
    asynchronous = protocol.endswith("gas")
    classes = [TimingClass.PSYNC] + ([TimingClass.ASYNC] if asynchronous else [])
    checker = CHECKERS[protocol]
    for _ in range(200):
        n = rng.randint(bounds.min_n, bounds.max_n)
        f = rng.randint(0, (n - 1) // 2) if byzantine else rng.randint(0, n - 1)
        graph = _random_graph(rng, n, classes, rng.random())
        if checker(graph, f).holds:
            break
    else:
        graph = TimedGraph.complete(n)
    delta = rng.randint(1, bounds.max_delta)
    gst = rng.randint(0, bounds.max_gst_deltas) * delta
    horizon = gst + bounds.horizon_deltas * delta * n
    if rng.random() < 0.4:
        inputs = [rng.choice("ab")] * n
    else:
        inputs = [rng.choice("abc") for _ in range(n)]
    values = tuple(sorted(set(inputs)))
    k = f if rng.random() < 0.5 else rng.randint(0, f)
    # Leaders of the first views are the most interesting nodes to corrupt.
    order = list(range(1, n)) + [0] if rng.random() < 0.5 else rng.sample(range(n), n)
    faulty = order[:k]
    script = AdversaryScript(
        policy=rng.choice(["random", "random", "honest", "max"]),
        psync_cap=rng.randint(1, 3 * delta),
        async_cap=rng.randint(1, 20) * delta,
    )
    if rng.random() < 0.5 and gst > 0:
        side = frozenset(x for x in range(n) if rng.random() < 0.5)
        rest = frozenset(range(n)) - side
        if side and rest and all(graph.link_class(a, b) is not TimingClass.SYNC for a in side for b in rest):
            script.holds.append((side, rest, rng.randint(1, gst)))
    fault_window = 20 * delta
    if byzantine:
        for node in faulty:
            name = rng.choice(_BYZ)
            if name == "equivocating-leader":
                group = [x for x in range(n) if rng.random() < 0.5]
                c = equivocating_leader(node, rng.choice([v for v in range(1, 2 * n + 1) if v % n == node]), values[0], values[-1], group,
                                        time=rng.randint(0, fault_window))
            elif name == "random-valid":
                c = Corruption(node, rng.randint(0, fault_window), name,
                               (("rate", "0.3"), ("values", ",".join(values))))
            else:
                c = Corruption(node, rng.randint(0, fault_window), name)
            script.corruptions.append(c)
    else:
        script.crashes = [(node, rng.randint(0, fault_window)) for node in faulty]
    sigma = rng.choice([Fraction(1), Fraction(5, 4), Fraction(3, 2)])
    return Scenario(
        name=f"fuzz-{protocol}-{seed}-{index}",
        protocol=protocol,
        unanimity_prephase=byzantine and rng.random() < 0.3,
        n=n, f=f, delta=delta, gst=gst, horizon=horizon, sigma=sigma,
        graph=graph, inputs=inputs, adversary=script, seed=rng.randrange(2**31),
    )


def fuzz(seed: int, protocol: str, count: int, bounds: FuzzBounds = FuzzBounds()):
    """Replayable stream of fuzzed scenarios; item ``i`` depends only on
    ``(seed, i)``."""
    for index in range(count):
        yield fuzz_one(seed, index, protocol, bounds)
