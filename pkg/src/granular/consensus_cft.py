"""Crash-fault-tolerant consensus over granular synchrony.

:class:`CftNode` is the per-node state machine. With ``asynchronous=False``
it runs the partially synchronous variant (view timer of 4 delta, Status sent
to the leader only); with ``asynchronous=True`` it runs the variant that
tolerates asynchronous links (Status broadcast and relayed, proposal timer of
3 d' delta, view change after n - f complaints).

Messages addressed to a view the node has not entered yet are buffered and
replayed when it enters that view.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

from .simnet import CancelTimer, Decide, Deliver, Init, Note, Send, SetTimer, Signed, TimerFire


@dataclass(frozen=True)
class ProtocolParams:
    n: int
    f: int
    delta: int
    d: int
    d_prime: int

    def __post_init__(self):
        if not 0 <= self.f < self.n:
            raise ValueError(f"need 0 <= f < n, got f={self.f}, n={self.n}")
        if self.delta < 1 or self.d < 0 or self.d_prime < 0:
            raise ValueError("delta must be positive and diameters non-negative")

    @property
    def quorum(self) -> int:
        return self.n - self.f

    def leader(self, view: int) -> int:
        return view % self.n


@dataclass(frozen=True, order=True)
class CftLock:
    view: int
    value: str


@dataclass(frozen=True)
class Status:
    view: int
    lock: CftLock


@dataclass(frozen=True)
class Propose:
    view: int
    value: str


@dataclass(frozen=True)
class Vote:
    view: int
    value: str


@dataclass(frozen=True)
class Commit:
    value: str


@dataclass(frozen=True)
class NewView:
    view: int


@dataclass(frozen=True)
class Locked:
    lock: CftLock


@dataclass(frozen=True)
class StatusSet:
    view: int
    statuses: frozenset


@dataclass(frozen=True)
class ViewChange:
    view: int


_VIEW_SCOPED = (Status, Propose, Vote, StatusSet)


class CftNode:
    def __init__(self, node_id: int, params: ProtocolParams, input_value: str, asynchronous: bool = False):
        self.id = node_id
        self.params = params
        self.input = input_value
        self.asynchronous = asynchronous
        self.view = 0
        self.lock = CftLock(0, input_value)
        self.decided = None
        self.statuses = defaultdict(dict)  # view -> origin -> Signed Status
        self.votes = defaultdict(set)  # (view, value) -> origins
        self.view_changes = defaultdict(set)  # view -> origins
        self.proposed: set[int] = set()
        self.accepted: dict[int, str] = {}
        self.stopped_through = 0  # Propose/Vote suppressed for views <= this
        self.new_view_seen: set[int] = set()
        self.new_view_sent: set[int] = set()
        self.status_echoed: set[int] = set()
        self.locked_seen: set = set()
        self.pending: list[Signed] = []

    def __repr__(self):
        return f"CftNode(id={self.id}, view={self.view}, lock={self.lock}, decided={self.decided})"

    def step(self, event) -> list:
        if self.decided is not None:
            return []
        out: list = []
        if isinstance(event, Init):
            self._enter_view(1, out)
        elif isinstance(event, Deliver):
            self._on_message(event.signed, out)
        elif isinstance(event, TimerFire):
            self._on_timer(event.timer_id, out)
        return out

    # -- views ---------------------------------------------------------------

    def _enter_view(self, v: int, out: list) -> None:
        if v <= self.view:
            return
        old = self.view
        out.append(CancelTimer(f"proposal:{old}" if self.asynchronous else f"view:{old}"))
        self.view = v
        out.append(Note(f"enter view={v}"))
        p = self.params
        if self.asynchronous:
            out.append(Send(Status(v, self.lock)))
        else:
            out.append(SetTimer(f"view:{v}", 4 * p.delta))
            out.append(Send(Status(v, self.lock), to=p.leader(v)))
        ready = [s for s in self.pending if s.body.view == v]
        self.pending = [s for s in self.pending if s.body.view > v]
        for signed in ready:
            if self.decided is None:
                self._on_message(signed, out)

    def _set_lock(self, lock: CftLock, out: list) -> None:
        if lock > self.lock:
            self.lock = lock
            out.append(Note(f"lock view={lock.view} value={lock.value}"))

    # -- messages ------------------------------------------------------------

    def _on_message(self, signed: Signed, out: list) -> None:
        body = signed.body
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
        elif isinstance(body, Vote):
            self.votes[(body.view, body.value)].add(signed.origin)
            if len(self.votes[(body.view, body.value)]) >= self.params.quorum:
                self._commit(body.value, out)
        elif isinstance(body, Commit):
            self._commit(body.value, out)
        elif isinstance(body, NewView):
            self._on_new_view(signed, out)
        elif isinstance(body, Locked):
            self._set_lock(body.lock, out)
            if signed.origin != self.id and signed not in self.locked_seen:
                self.locked_seen.add(signed)
                out.append(Send(signed))
        elif isinstance(body, ViewChange) and self.asynchronous:
            self.view_changes[body.view].add(signed.origin)
            v = body.view
            if v >= self.view and v not in self.new_view_sent and len(self.view_changes[v]) >= self.params.quorum:
                self.new_view_sent.add(v)
                out.append(Send(NewView(v + 1)))

    def _on_status(self, signed: Signed, out: list) -> None:
        v = signed.body.view
        if signed.origin in self.statuses[v]:
            return
        self.statuses[v][signed.origin] = signed
        p = self.params
        count = len(self.statuses[v])
        if count < p.quorum:
            return
        if p.leader(v) == self.id:
            if v not in self.proposed:
                self.proposed.add(v)
                best = max(s.body.lock for s in self.statuses[v].values())
                out.append(Send(Propose(v, best.value)))
        elif self.asynchronous and v not in self.status_echoed:
            self.status_echoed.add(v)
            chosen = sorted(self.statuses[v])[: p.quorum]
            out.append(Send(StatusSet(v, frozenset(self.statuses[v][o] for o in chosen))))
            out.append(SetTimer(f"proposal:{v}", 3 * p.d_prime * p.delta))

    def _on_propose(self, signed: Signed, out: list) -> None:
        body = signed.body
        v = body.view
        if signed.origin != self.params.leader(v) or v <= self.stopped_through or v in self.accepted:
            return
        self.accepted[v] = body.value
        self._set_lock(CftLock(v, body.value), out)
        if self.asynchronous and signed.origin != self.id:
            out.append(Send(signed))
        out.append(Send(Vote(v, body.value)))

    def _on_new_view(self, signed: Signed, out: list) -> None:
        v = signed.body.view
        if v <= self.view or v in self.new_view_seen:
            return
        self.new_view_seen.add(v)
        if signed.origin != self.id:
            out.append(Send(signed))
        out.append(Send(Locked(self.lock)))
        self.stopped_through = max(self.stopped_through, v - 1)
        out.append(SetTimer(f"wait:{v}", 2 * self.params.d * self.params.delta))

    def _commit(self, value: str, out: list) -> None:
        out.append(Send(Commit(value)))
        out.append(Decide(value))
        self.decided = value

    # -- timers --------------------------------------------------------------

    def _on_timer(self, timer_id: str, out: list) -> None:
        kind, _, arg = timer_id.partition(":")
        v = int(arg)
        if kind == "view" and v == self.view:
            out.append(Send(NewView(v + 1)))
        elif kind == "proposal" and v == self.view and v not in self.accepted:
            out.append(Send(ViewChange(v)))
        elif kind == "wait":
            self._enter_view(v, out)


def cft_gps_step(state: CftNode, event) -> list:
    """One transition of the partially synchronous CFT protocol."""
    assert not state.asynchronous
    return state.step(event)


def cft_gas_step(state: CftNode, event) -> list:
    """One transition of the CFT protocol for graphs with asynchronous links."""
    assert state.asynchronous
    return state.step(event)
