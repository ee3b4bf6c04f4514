"""Deterministic discrete-event network simulator.

Links are reliable, FIFO and authenticated. Every message travels as a
:class:`Signed` value whose `origin` is fixed at creation; echoes forward the
same value, and the simulator refuses to let a node emit a foreign-origin
message it has never received. Time is an integer tick count.
"""

from __future__ import annotations

import dataclasses
import hashlib
import heapq
import itertools
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Iterable, Optional

from .graph import TimedGraph, TimingClass


class SimulationError(RuntimeError):
    pass


class ScenarioError(SimulationError):
    pass


class ContractViolation(SimulationError):
    pass


class ForgeryError(SimulationError):
    pass


class Signed:
    """A message body together with the node that signed it."""

    __slots__ = ("origin", "body", "_hash", "_text")

    def __init__(self, origin: int, body: Any):
        self.origin = origin
        self.body = body
        self._hash = hash((origin, body))
        self._text = None

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, Signed):
            return NotImplemented
        return self._hash == other._hash and self.origin == other.origin and self.body == other.body

    def __hash__(self):
        return self._hash

    def __repr__(self):
        return f"Signed({render(self)})"


def render(obj) -> str:
    """Canonical single-line rendering used in traces."""
    if isinstance(obj, Signed):
        if obj._text is None:
            obj._text = f"{obj.origin}:{render(obj.body)}"
        return obj._text
    if obj is None:
        return "_"
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        inner = ",".join(f"{f.name}={render(getattr(obj, f.name))}" for f in dataclasses.fields(obj))
        return f"{type(obj).__name__}({inner})"
    if isinstance(obj, (frozenset, set)):
        return "{" + ",".join(sorted(render(x) for x in obj)) + "}"
    if isinstance(obj, (tuple, list)):
        return "[" + ",".join(render(x) for x in obj) + "]"
    return str(obj)


def signed_parts(obj) -> Iterable[Signed]:
    """Every Signed value nested inside `obj`, outermost first."""
    if isinstance(obj, Signed):
        yield obj
        yield from signed_parts(obj.body)
    elif dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        for f in dataclasses.fields(obj):
            yield from signed_parts(getattr(obj, f.name))
    elif isinstance(obj, (frozenset, tuple, list)):
        for x in obj:
            yield from signed_parts(x)


# Events handed to node state machines.

@dataclass(frozen=True)
class Init:
    pass


@dataclass(frozen=True)
class Deliver:
    signed: Signed
    sender: int


@dataclass(frozen=True)
class TimerFire:
    timer_id: str


# Actions returned by node state machines.

@dataclass(frozen=True)
class Send:
    msg: Any  # a bare body (signed by the sender) or a Signed being echoed
    to: Optional[int] = None  # None broadcasts to every node, sender included


@dataclass(frozen=True)
class SetTimer:
    timer_id: str
    duration: int


@dataclass(frozen=True)
class CancelTimer:
    timer_id: str


@dataclass(frozen=True)
class Decide:
    value: Any


@dataclass(frozen=True)
class Note:
    text: str


@dataclass(frozen=True)
class Envelope:
    uid: int
    signed: Signed
    sender: int
    recipient: int
    send_time: int
    link_seq: int
    deliver_time: int
    link: Optional[TimingClass]  # None for self-delivery

    @property
    def origin(self) -> int:
        return self.signed.origin

    @property
    def body(self):
        return self.signed.body


def contract_max(link: Optional[TimingClass], send_time: int, delta: int, gst: int) -> Optional[int]:
    """Latest delivery time a link class allows, or None when unbounded."""
    if link is None:
        return send_time + 1
    if link is TimingClass.SYNC:
        return send_time + delta
    if link is TimingClass.PSYNC:
        return max(send_time, gst) + delta
    return None


def within_contract(link, send_time: int, deliver_time: int, delta: int, gst: int) -> bool:
    cmax = contract_max(link, send_time, delta, gst)
    return deliver_time > send_time and (cmax is None or deliver_time <= cmax)


# Delay policies. Each returns a delivery time for a non-self envelope.

@dataclass
class HonestDelays:
    """Maximal allowed delay on timely links; seeded draws before GST and on
    asynchronous links."""

    psync_cap: Optional[int] = None
    async_cap: Optional[int] = None

    def choose(self, sim: "Simulator", sender, recipient, signed, link, now) -> int:
        d = sim.delta
        if link is TimingClass.SYNC or (link is TimingClass.PSYNC and now >= sim.gst):
            return now + d
        if link is TimingClass.PSYNC:
            cap = min(self.psync_cap or d, sim.gst + d - now)
            return now + sim.rng.randint(1, max(cap, 1))
        return sim.clamp_async(now, now + sim.rng.randint(1, self.async_cap or 5 * d))


@dataclass
class MaxDelays:
    """Stretch every delay to its contract maximum; asynchronous messages
    wait until `async_release` (default: one tick before the horizon)."""

    async_release: Optional[int] = None

    def choose(self, sim, sender, recipient, signed, link, now) -> int:
        cmax = contract_max(link, now, sim.delta, sim.gst)
        if cmax is not None:
            return cmax
        release = self.async_release if self.async_release is not None else sim.horizon - 1
        return max(now + 1, release)


@dataclass
class RandomDelays:
    """Uniform draws over each link's whole contract window."""

    async_cap: int = 50

    def choose(self, sim, sender, recipient, signed, link, now) -> int:
        cmax = contract_max(link, now, sim.delta, sim.gst)
        if cmax is None:
            return sim.clamp_async(now, now + sim.rng.randint(1, self.async_cap))
        return sim.rng.randint(now + 1, cmax)


@dataclass
class ScriptedDelays:
    """Explicit overrides on top of a base policy.

    `overrides` maps ``(origin, sender, recipient, link_seq)`` to a delay;
    `holds` lists ``(group_a, group_b, release)``: traffic between the groups
    is delivered no earlier than `release`, clipped to the link contract.
    """

    base: Any = field(default_factory=HonestDelays)
    overrides: dict = field(default_factory=dict)
    holds: list = field(default_factory=list)

    def choose(self, sim, sender, recipient, signed, link, now) -> int:
        seq = sim.peek_link_seq(sender, recipient)
        key = (signed.origin, sender, recipient, seq)
        if key in self.overrides:
            return now + self.overrides[key]
        t = self.base.choose(sim, sender, recipient, signed, link, now)
        for group_a, group_b, release in self.holds:
            if (sender in group_a and recipient in group_b) or (sender in group_b and recipient in group_a):
                t = max(t, release)
                cmax = contract_max(link, now, sim.delta, sim.gst)
                if cmax is not None:
                    t = min(t, cmax)
        return t


@dataclass(frozen=True)
class TraceRecord:
    time: int
    node: int  # -1 for run-level notes
    kind: str  # send | deliver | timer_set | timer_fire | state_note | decide
    data: Any

    @property
    def detail(self) -> str:
        d = self.data
        if self.kind == "send":
            return (f"env={d.uid} to={d.recipient} seq={d.link_seq} at={d.deliver_time} "
                    f"{render(d.signed)}")
        if self.kind == "deliver":
            return f"env={d.uid} from={d.sender} seq={d.link_seq} sent={d.send_time} {render(d.signed)}"
        if self.kind == "timer_set":
            return f"{d[0]} fire={d[1]}"
        return render(d)

    def line(self) -> str:
        node = "-" if self.node < 0 else str(self.node)
        return f"{self.time}\t{node}\t{self.kind}\t{self.detail}"


@dataclass
class Trace:
    """Totally ordered record log of one run plus its run-level outcome."""

    n: int
    horizon: int
    records: list = field(default_factory=list)
    end_reason: str = ""
    held: int = 0
    crashed: dict = field(default_factory=dict)  # node -> crash time
    corrupted: dict = field(default_factory=dict)  # node -> corruption time

    def lines(self) -> list[str]:
        return [r.line() for r in self.records]

    def dumps(self) -> str:
        return "".join(line + "\n" for line in self.lines())

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()

    def of_kind(self, kind: str):
        return [r for r in self.records if r.kind == kind]

    def decisions(self) -> dict:
        return {r.node: r for r in self.records if r.kind == "decide"}

    def correct_nodes(self) -> list[int]:
        return [i for i in range(self.n) if i not in self.crashed and i not in self.corrupted]

    @classmethod
    def parse(cls, text: str) -> "Trace":
        """Rebuild a trace from its serialized form. Records keep their
        detail strings as data; run-level fields come from the notes."""
        trace = cls(n=0, horizon=0)
        for raw in text.splitlines():
            if not raw:
                continue
            time_s, node_s, kind, detail = raw.split("\t", 3)
            node = -1 if node_s == "-" else int(node_s)
            time = int(time_s)
            trace.records.append(_ParsedRecord(time, node, kind, detail))
            if kind == "state_note":
                words = dict(w.split("=", 1) for w in detail.split()[1:] if "=" in w)
                head = detail.split()[0] if detail else ""
                if node < 0 and head == "begin":
                    trace.n, trace.horizon = int(words["n"]), int(words["horizon"])
                elif node < 0 and head == "end":
                    trace.end_reason, trace.held = words["reason"], int(words["held"])
                elif head == "crash":
                    trace.crashed[node] = time
                elif head == "corrupt":
                    trace.corrupted[node] = time
        return trace


@dataclass(frozen=True)
class _ParsedRecord(TraceRecord):
    @property
    def detail(self) -> str:
        return self.data


_RANK = {"crash": 0, "corrupt": 1, "init": 2, "deliver": 3, "timer": 4}


class Simulator:
    """Runs node state machines over a timed graph.

    `nodes` maps node id to an object with ``step(event) -> list[action]``.
    `corruptions` is a list of ``(node, time, behavior)``; at that time the
    behavior's ``attach(node_id, honest_node, sim)`` is called and dispatch
    switches to ``behavior.step``.
    """

    def __init__(
        self,
        graph: TimedGraph,
        nodes: dict,
        *,
        delta: int,
        horizon: int,
        gst: int = 0,
        policy=None,
        sigma=1,
        skews: Optional[dict] = None,
        seed: int = 0,
        crashes: Iterable = (),
        corruptions: Iterable = (),
        stop_when_decided: bool = True,
    ):
        if delta < 1:
            raise ScenarioError("delta must be a positive integer")
        self.graph = graph
        self.n = graph.n
        self.nodes = dict(nodes)
        self.delta = delta
        self.gst = gst
        self.horizon = horizon
        self.policy = policy if policy is not None else HonestDelays()
        self.rng = random.Random(seed)
        self.seed = seed
        sigma = Fraction(sigma)
        if sigma < 1:
            raise ScenarioError("clock skew bound sigma must be >= 1")
        self.skews = {i: Fraction((skews or {}).get(i, sigma)) for i in range(self.n)}
        for i, s in self.skews.items():
            if not 1 <= s <= sigma:
                raise ScenarioError(f"skew of node {i} outside [1, sigma]")
        self.stop_when_decided = stop_when_decided
        self.now = 0
        self.trace = Trace(n=self.n, horizon=horizon)
        self.crashed: dict[int, int] = {}
        self.corrupted: dict[int, int] = {}
        self.decided: dict[int, Any] = {}
        self.target = dict(self.nodes)
        self.known: dict[int, set] = {i: set() for i in range(self.n)}
        self._queue: list = []
        self._seq = itertools.count()
        self._uid = itertools.count()
        self._link_seq: dict = {}
        self._last_delivery: dict = {}
        self._timers: dict = {}
        self._crashes = sorted(crashes)
        self._corruptions = list(corruptions)

    # -- scheduling ----------------------------------------------------------

    def _push(self, time: int, kind: str, node: int, payload) -> None:
        heapq.heappush(self._queue, (time, _RANK[kind], node, next(self._seq), kind, payload))

    def clamp_async(self, now: int, t: int) -> int:
        """Eventual delivery in a finite run means before the horizon."""
        return max(now + 1, min(t, self.horizon - 1))

    def peek_link_seq(self, sender: int, recipient: int) -> int:
        return self._link_seq.get((sender, recipient), 0)

    def schedule_send(self, sender: int, recipient: int, signed: Signed) -> Envelope:
        now = self.now
        if sender == recipient:
            link = None
            t = now + 1
        else:
            link = self.graph.link_class(sender, recipient)
            if link is None:
                raise ScenarioError(f"no link between {sender} and {recipient}")
            t = self.policy.choose(self, sender, recipient, signed, link, now)
        cmax = contract_max(link, now, self.delta, self.gst)
        if not within_contract(link, now, t, self.delta, self.gst):
            raise ContractViolation(
                f"delivery at {t} breaks {link} contract for {render(signed)} "
                f"sent {sender}->{recipient} at {now}")
        key = (sender, recipient)
        prev = self._last_delivery.get(key)
        if prev is not None and t <= prev:
            # Strictly after the previous delivery when the contract allows,
            # otherwise the same tick, ordered by the queue sequence number.
            limit = cmax if cmax is not None else max(self.horizon - 1, now + 1)
            t = prev + 1 if prev + 1 <= limit else prev
        self._last_delivery[key] = t
        seq = self._link_seq.get(key, 0)
        self._link_seq[key] = seq + 1
        env = Envelope(next(self._uid), signed, sender, recipient, now, seq, t, link)
        self.trace.records.append(TraceRecord(now, sender, "send", env))
        self._push(t, "deliver", recipient, env)
        return env

    def set_timer(self, node: int, duration: int, timer_id: str) -> int:
        if node in self.crashed:
            raise SimulationError(f"node {node} is crashed")
        if (node, timer_id) in self._timers:
            raise SimulationError(f"timer {timer_id!r} already live on node {node}")
        fire = self.now + math.ceil(Fraction(duration) * self.skews[node])
        token = next(self._seq)
        self._timers[(node, timer_id)] = token
        self.trace.records.append(TraceRecord(self.now, node, "timer_set", (timer_id, fire)))
        self._push(fire, "timer", node, (timer_id, token))
        return fire

    def cancel_timer(self, node: int, timer_id: str) -> None:
        self._timers.pop((node, timer_id), None)

    def note(self, node: int, text: str) -> None:
        self.trace.records.append(TraceRecord(self.now, node, "state_note", text))

    # -- action handling -----------------------------------------------------

    def _sign(self, node: int, msg) -> Signed:
        signed = msg if isinstance(msg, Signed) else Signed(node, msg)
        known = self.known[node]
        if signed.origin != node and signed not in known:
            raise ForgeryError(f"node {node} emitted unseen foreign message {render(signed)}")
        for part in signed_parts(signed.body):
            if part.origin != node and part not in known:
                raise ForgeryError(f"node {node} embedded unseen foreign message {render(part)}")
        known.add(signed)
        return signed

    def _apply(self, node: int, actions) -> None:
        for act in actions or ():
            if isinstance(act, Send):
                signed = self._sign(node, act.msg)
                recipients = range(self.n) if act.to is None else (act.to,)
                for r in recipients:
                    self.schedule_send(node, r, signed)
            elif isinstance(act, SetTimer):
                self.set_timer(node, act.duration, act.timer_id)
            elif isinstance(act, CancelTimer):
                self.cancel_timer(node, act.timer_id)
            elif isinstance(act, Decide):
                if node in self.decided:
                    raise SimulationError(f"node {node} decided twice")
                self.decided[node] = act.value
                self.trace.records.append(TraceRecord(self.now, node, "decide", act.value))
            elif isinstance(act, Note):
                self.note(node, act.text)
            else:
                raise SimulationError(f"unknown action {act!r}")

    # -- main loop -----------------------------------------------------------

    def _all_correct_decided(self) -> bool:
        return all(i in self.decided for i in range(self.n)
                   if i not in self.crashed and i not in self.corrupted)

    def run(self) -> Trace:
        self.note(-1, f"begin n={self.n} horizon={self.horizon} delta={self.delta} gst={self.gst} seed={self.seed}")
        for node, t in self._crashes:
            self._push(t, "crash", node, None)
        for node, t, behavior in self._corruptions:
            self._push(t, "corrupt", node, behavior)
        for i in range(self.n):
            self._push(0, "init", i, None)
        reason = "quiescent"
        while self._queue:
            if self._queue[0][0] > self.horizon:
                reason = "horizon"
                break
            time, _, node, _, kind, payload = heapq.heappop(self._queue)
            self.now = time
            self._dispatch(kind, node, payload)
            if self.stop_when_decided and self._all_correct_decided():
                reason = "all-decided"
                break
        held = sum(1 for e in self._queue
                   if e[4] == "deliver" and e[5].link not in (None, TimingClass.SYNC)
                   and e[2] not in self.crashed)
        self.trace.end_reason = reason
        self.trace.held = held if reason == "horizon" else 0
        self.trace.crashed = dict(self.crashed)
        self.trace.corrupted = dict(self.corrupted)
        self.note(-1, f"end reason={reason} held={self.trace.held}")
        return self.trace

    def _dispatch(self, kind: str, node: int, payload) -> None:
        if kind == "crash":
            if node not in self.crashed:
                self.crashed[node] = self.now
                self.note(node, "crash")
            return
        if node in self.crashed:
            return
        if kind == "corrupt":
            if node in self.corrupted:
                return
            self.corrupted[node] = self.now
            self.note(node, f"corrupt behavior={getattr(payload, 'name', type(payload).__name__)}")
            payload.attach(node, self.nodes[node], self)
            self.target[node] = payload
            return
        if kind == "init":
            self._apply(node, self.target[node].step(Init()))
        elif kind == "deliver":
            env: Envelope = payload
            self.trace.records.append(TraceRecord(self.now, node, "deliver", env))
            self.known[node].update(signed_parts(env.signed))
            self._apply(node, self.target[node].step(Deliver(env.signed, env.sender)))
        elif kind == "timer":
            timer_id, token = payload
            if self._timers.get((node, timer_id)) != token:
                return
            del self._timers[(node, timer_id)]
            self.trace.records.append(TraceRecord(self.now, node, "timer_fire", timer_id))
            self._apply(node, self.target[node].step(TimerFire(timer_id)))
