"""Byzantine-fault-tolerant consensus over granular synchrony.

:class:`BftNode` runs the partially synchronous protocol by default (view
timer of (5 + d) delta, view change on f + 1 complaints) and the variant for
asynchronous links with ``asynchronous=True`` (Status relayed to all,
proposal timer of 3 d' delta, view change on n - f complaints). With
``prephase=True`` it first runs an input-exchange round at view 0 that
locks every correct node on a unanimous input.

Certificates are sets of :class:`~granular.simnet.Signed` messages and are
checked structurally: distinct origins, matching contents, right count.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Optional

from .consensus_cft import ProtocolParams
from .simnet import CancelTimer, Decide, Deliver, Init, Note, Send, SetTimer, Signed, TimerFire


@dataclass(frozen=True)
class BftLock:
    """A value certified in `view` by `certificate`: n - f matching Vote1
    messages, or f + 1 matching Input messages for a view-0 lock."""

    view: int
    value: str
    certificate: frozenset

    def rank(self) -> tuple:
        return (self.view, self.value)


@dataclass(frozen=True)
class Status:
    view: int
    lock: Optional[BftLock]


@dataclass(frozen=True)
class Propose:
    view: int
    value: str
    justification: frozenset  # Signed Status messages


@dataclass(frozen=True)
class Vote1:
    view: int
    value: str


@dataclass(frozen=True)
class Vote2:
    view: int
    value: str


@dataclass(frozen=True)
class Commit:
    certificate: frozenset  # Signed Vote2 messages


@dataclass(frozen=True)
class ViewChange:
    view: int


@dataclass(frozen=True)
class ViewChangeCert:
    view: int
    votes: frozenset  # Signed ViewChange messages


@dataclass(frozen=True)
class Locked:
    lock: BftLock


@dataclass(frozen=True)
class StatusSet:
    view: int
    statuses: frozenset


@dataclass(frozen=True)
class Input:
    value: str


@dataclass(frozen=True)
class ForwardInputs:
    inputs: frozenset  # Signed Input messages


_VIEW_SCOPED = (Status, Propose, Vote1, Vote2, StatusSet)


def lock_rank(lock: Optional[BftLock]) -> tuple:
    return (-1, "") if lock is None else lock.rank()


def _matching(cert, kind, count: int, **fields) -> bool:
    if not isinstance(cert, frozenset) or len(cert) != count:
        return False
    origins = set()
    for s in cert:
        if not isinstance(s, Signed) or not isinstance(s.body, kind):
            return False
        if any(getattr(s.body, k) != v for k, v in fields.items()):
            return False
        origins.add(s.origin)
    return len(origins) == count


def valid_lock(lock, params: ProtocolParams) -> bool:
    if lock is None:
        return True
    if not isinstance(lock, BftLock):
        return False
    if lock.view == 0:
        return _matching(lock.certificate, Input, params.f + 1, value=lock.value)
    return _matching(lock.certificate, Vote1, params.quorum, view=lock.view, value=lock.value)


def valid_commit(cert, params: ProtocolParams) -> Optional[str]:
    """The committed value if `cert` is a well-formed Vote2 certificate."""
    if not isinstance(cert, frozenset) or not cert:
        return None
    first = next(iter(cert)).body
    if not isinstance(first, Vote2):
        return None
    if _matching(cert, Vote2, params.quorum, view=first.view, value=first.value):
        return first.value
    return None


def highest_lock(statuses) -> Optional[BftLock]:
    locks = [s.body.lock for s in statuses if s.body.lock is not None]
    return max(locks, key=BftLock.rank) if locks else None


def justified(value: str, view: int, justification, params: ProtocolParams) -> bool:
    """Whether `justification` is n - f distinct Status(view) messages with
    valid locks, and `value` is the highest locked value among them (any
    value when none is locked)."""
    if not isinstance(justification, frozenset):
        return False
    origins = set()
    for s in justification:
        if not isinstance(s, Signed) or not isinstance(s.body, Status) or s.body.view != view:
            return False
        if not valid_lock(s.body.lock, params):
            return False
        origins.add(s.origin)
    if len(origins) < params.quorum:
        return False
    top = highest_lock(justification)
    return top is None or top.value == value


def _pick(tally: dict, count: int) -> frozenset:
    return frozenset(tally[o] for o in sorted(tally)[:count])


class BftNode:
    def __init__(
        self,
        node_id: int,
        params: ProtocolParams,
        input_value: str,
        asynchronous: bool = False,
        prephase: bool = False,
    ):
        if params.n < 2 * params.f + 1:
            raise ValueError("BFT protocols need n >= 2f + 1")
        self.id = node_id
        self.params = params
        self.input = input_value
        self.asynchronous = asynchronous
        self.prephase = prephase
        self.vc_threshold = params.quorum if asynchronous else params.f + 1
        self.view = 0
        self.lock: Optional[BftLock] = None
        self.decided = None
        self.statuses = defaultdict(dict)
        self.proposals = defaultdict(dict)  # view -> value -> Signed Propose from the leader
        self.accepted: dict[int, Signed] = {}
        self.equivocated: set[int] = set()
        self.vote1 = defaultdict(dict)  # (view, value) -> origin -> Signed
        self.vote2 = defaultdict(dict)
        self.view_changes = defaultdict(dict)  # view -> origin -> Signed
        self.vc_handled: set[int] = set()
        self.vc_sent: set[int] = set()
        self.vote1_sent: set[int] = set()
        self.vote2_sent: set[int] = set()
        self.proposed: set[int] = set()
        self.status_echoed: set[int] = set()
        self.stopped_through = 0
        self.locked_seen: set = set()
        self.pending: list[Signed] = []
        # input-exchange round
        self.inputs: dict[int, Signed] = {}
        self.forwarded: dict[int, Signed] = {}
        self.prephase_done = not prephase

    def __repr__(self):
        return f"BftNode(id={self.id}, view={self.view}, lock={lock_rank(self.lock)}, decided={self.decided})"

    def step(self, event) -> list:
        if self.decided is not None:
            return []
        out: list = []
        if isinstance(event, Init):
            if self.prephase:
                out.append(Send(Input(self.input)))
                out.append(SetTimer("input", 2 * self.params.d * self.params.delta))
            else:
                self._enter_view(1, out)
        elif isinstance(event, Deliver):
            self._on_message(event.signed, out)
        elif isinstance(event, TimerFire):
            self._on_timer(event.timer_id, out)
        return out

    # -- views and locks -----------------------------------------------------

    def _enter_view(self, v: int, out: list) -> None:
        if v <= self.view:
            return
        p = self.params
        old = self.view
        out.append(CancelTimer(f"proposal:{old}" if self.asynchronous else f"view:{old}"))
        self.view = v
        out.append(Note(f"enter view={v}"))
        if self.asynchronous:
            out.append(Send(Status(v, self.lock)))
        else:
            out.append(SetTimer(f"view:{v}", (5 + p.d) * p.delta))
            out.append(Send(Status(v, self.lock), to=p.leader(v)))
        ready = [s for s in self.pending if s.body.view == v]
        self.pending = [s for s in self.pending if s.body.view > v]
        for signed in ready:
            if self.decided is None:
                self._on_message(signed, out)

    def _adopt(self, lock: BftLock, out: list) -> None:
        if lock_rank(lock) > lock_rank(self.lock):
            self.lock = lock
            out.append(Note(f"lock view={lock.view} value={lock.value}"))

    # -- messages ------------------------------------------------------------

    def _on_message(self, signed: Signed, out: list) -> None:
        body = signed.body
        if isinstance(body, (Input, ForwardInputs)):
            if not self.prephase_done:
                self._on_prephase(signed, out)
            return
        if isinstance(body, _VIEW_SCOPED):
            if body.view > self.view:
                self.pending.append(signed)
                return
            if body.view < self.view:
                return
        if isinstance(body, Status):
            self._on_status(signed, out)
        elif isinstance(body, StatusSet):
            for part in body.statuses:
                if isinstance(part, Signed) and isinstance(part.body, Status) and part.body.view == body.view:
                    self._on_status(part, out)
        elif isinstance(body, Propose):
            self._on_propose(signed, out)
        elif isinstance(body, Vote1):
            self._on_vote1(signed, out)
        elif isinstance(body, Vote2):
            self._on_vote2(signed, out)
        elif isinstance(body, Commit):
            value = valid_commit(body.certificate, self.params)
            if value is not None:
                self._commit(body.certificate, value, out)
        elif isinstance(body, ViewChange):
            self._count_view_change(signed, out)
        elif isinstance(body, ViewChangeCert):
            for part in body.votes:
                if isinstance(part, Signed) and isinstance(part.body, ViewChange):
                    self._count_view_change(part, out)
        elif isinstance(body, Locked):
            if valid_lock(body.lock, self.params) and body.lock is not None:
                self._adopt(body.lock, out)
                if signed.origin != self.id and signed not in self.locked_seen:
                    self.locked_seen.add(signed)
                    out.append(Send(signed))

    def _on_status(self, signed: Signed, out: list) -> None:
        v = signed.body.view
        if signed.origin in self.statuses[v] or not valid_lock(signed.body.lock, self.params):
            return
        self.statuses[v][signed.origin] = signed
        p = self.params
        if len(self.statuses[v]) < p.quorum:
            return
        if p.leader(v) == self.id:
            if v not in self.proposed:
                self.proposed.add(v)
                S = _pick(self.statuses[v], p.quorum)
                top = highest_lock(S)
                value = self.input if top is None else top.value
                out.append(Send(Propose(v, value, S)))
        elif self.asynchronous and v not in self.status_echoed:
            self.status_echoed.add(v)
            out.append(Send(StatusSet(v, _pick(self.statuses[v], p.quorum))))
            out.append(SetTimer(f"proposal:{v}", 3 * p.d_prime * p.delta))

    def _on_propose(self, signed: Signed, out: list) -> None:
        body = signed.body
        v = body.view
        if signed.origin != self.params.leader(v):
            return
        seen = self.proposals[v]
        if body.value in seen:
            return
        seen[body.value] = signed
        if len(seen) >= 2:
            if v not in self.equivocated:
                self.equivocated.add(v)
                out.append(Note(f"equivocation view={v}"))
                for value in sorted(seen)[:2]:
                    out.append(Send(seen[value]))
                self._send_view_change(v, out)
            return
        if v in self.accepted or not justified(body.value, v, body.justification, self.params):
            return
        self.accepted[v] = signed
        if signed.origin != self.id:
            out.append(Send(signed))
        out.append(SetTimer(f"vote:{v}", self.params.d * self.params.delta))

    def _on_vote1(self, signed: Signed, out: list) -> None:
        body = signed.body
        tally = self.vote1[(body.view, body.value)]
        if signed.origin in tally:
            return
        tally[signed.origin] = signed
        p = self.params
        if len(tally) < p.quorum:
            return
        self._adopt(BftLock(body.view, body.value, _pick(tally, p.quorum)), out)
        v = body.view
        if v > self.stopped_through and v not in self.vote2_sent:
            self.vote2_sent.add(v)
            out.append(Send(Vote2(v, body.value)))

    def _on_vote2(self, signed: Signed, out: list) -> None:
        body = signed.body
        tally = self.vote2[(body.view, body.value)]
        if signed.origin in tally:
            return
        tally[signed.origin] = signed
        if len(tally) >= self.params.quorum:
            self._commit(_pick(tally, self.params.quorum), body.value, out)

    def _commit(self, certificate: frozenset, value: str, out: list) -> None:
        out.append(Send(Commit(certificate)))
        out.append(Decide(value))
        self.decided = value

    def _send_view_change(self, v: int, out: list) -> None:
        if v not in self.vc_sent:
            self.vc_sent.add(v)
            out.append(Send(ViewChange(v)))

    def _count_view_change(self, signed: Signed, out: list) -> None:
        v = signed.body.view
        tally = self.view_changes[v]
        if signed.origin in tally:
            return
        tally[signed.origin] = signed
        if v < self.view or v in self.vc_handled or len(tally) < self.vc_threshold:
            return
        self.vc_handled.add(v)
        self.stopped_through = max(self.stopped_through, v)
        out.append(Note(f"view-change view={v}"))
        out.append(Send(ViewChangeCert(v, _pick(tally, self.vc_threshold))))
        if self.lock is not None:
            out.append(Send(Locked(self.lock)))
        out.append(SetTimer(f"wait:{v + 1}", 2 * self.params.d * self.params.delta))

    # -- input exchange (view 0) ---------------------------------------------

    def _on_prephase(self, signed: Signed, out: list) -> None:
        body = signed.body
        p = self.params
        if isinstance(body, Input):
            if signed.origin in self.inputs:
                return
            self.inputs[signed.origin] = signed
            if signed.origin != self.id:
                out.append(Send(signed))
            return
        if signed.origin in self.forwarded:
            return
        if not all(isinstance(s, Signed) and isinstance(s.body, Input) for s in body.inputs):
            return
        self.forwarded[signed.origin] = signed
        if len(self.forwarded) < p.quorum:
            return
        support = defaultdict(dict)  # value -> origin -> Signed Input
        for fwd in self.forwarded.values():
            for s in fwd.body.inputs:
                support[s.body.value].setdefault(s.origin, s)
        backed = [(len(o), value) for value, o in support.items() if len(o) >= p.f + 1]
        if backed:
            # own input when it is backed, else the best-backed (smallest on ties)
            if any(value == self.input for _, value in backed):
                value = self.input
            else:
                _, value = min(backed, key=lambda t: (-t[0], t[1]))
            self._adopt(BftLock(0, value, _pick(support[value], p.f + 1)), out)
        self.prephase_done = True
        self._enter_view(1, out)

    # -- timers --------------------------------------------------------------

    def _on_timer(self, timer_id: str, out: list) -> None:
        if timer_id == "input":
            if not self.prephase_done:
                out.append(Send(ForwardInputs(frozenset(self.inputs.values()))))
            return
        kind, _, arg = timer_id.partition(":")
        v = int(arg)
        if kind == "view" and v == self.view:
            self._send_view_change(v, out)
        elif kind == "proposal" and v == self.view and v not in self.accepted:
            self._send_view_change(v, out)
        elif kind == "vote":
            if v == self.view and v not in self.equivocated and v > self.stopped_through and v not in self.vote1_sent:
                self.vote1_sent.add(v)
                out.append(Send(Vote1(v, self.accepted[v].body.value)))
        elif kind == "wait":
            self._enter_view(v, out)


def bft_gps_step(state: BftNode, event) -> list:
    """One transition of the partially synchronous BFT protocol."""
    assert not state.asynchronous
    return state.step(event)


def bft_gas_step(state: BftNode, event) -> list:
    """One transition of the BFT protocol for graphs with asynchronous links."""
    assert state.asynchronous
    return state.step(event)


def bft_unanimity_prephase_step(state: BftNode, event) -> list:
    """One transition while the input-exchange round is still running."""
    assert state.prephase
    return state.step(event)
