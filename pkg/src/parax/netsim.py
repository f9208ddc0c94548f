"""Seeded discrete-event network: node lifecycles, latency and loss, fault windows,
and the cycle clock."""
from __future__ import annotations

import enum
import heapq
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np

from .errors import DuplicateNode, UnknownNode
from .ledger import KeyPair, digest

log = logging.getLogger(__name__)


class NodeClass(enum.Enum):
    SERVER = "Server"
    MOBILE = "Mobile"


class Fault(enum.Enum):
    HONEST = "Honest"
    CRASH = "Crash"
    EQUIVOCATE = "Equivocate"
    TAMPER = "TamperSegment"


class EventKind(enum.Enum):
    DELIVER = "Deliver"
    CYCLE_TICK = "CycleTick"
    NODE_UP = "NodeUp"
    NODE_DOWN = "NodeDown"
    FAULT_TOGGLE = "FaultToggle"


@dataclass
class NodeProfile:
    node_id: str
    node_class: NodeClass = NodeClass.SERVER
    capacity: int = 10
    availability: float = 1.0
    fault: Fault = Fault.HONEST
    keypair: Optional[KeyPair] = None

    def __post_init__(self):
        if not 0.0 <= self.availability <= 1.0:
            raise ValueError("availability must lie in [0, 1]")
        if self.node_class is NodeClass.SERVER and self.availability != 1.0:
            raise ValueError("server nodes are always available")


@dataclass
class SimEvent:
    at: int
    seq: int
    kind: EventKind
    payload: Any = None

    def line(self) -> str:
        return f"{self.at} {self.kind.value} {_describe(self.payload)}"


def _describe(payload) -> str:
    if payload is None:
        return "-"
    if isinstance(payload, Message):
        return payload.describe()
    return str(payload)


@dataclass
class Message:
    src: Optional[str]
    dst: str
    kind: str
    body: Any = None
    size: int = 0
    sent_at: int = 0
    dropped: bool = False
    reason: str = ""
    arrives_at: int = 0

    def describe(self) -> str:
        status = f"drop:{self.reason}" if self.dropped else "ok"
        return f"{self.src or 'client'}->{self.dst} {self.kind} {self.size}B {status}"


@dataclass
class NodeState:
    profile: NodeProfile
    up: bool = True
    fault: Fault = Fault.HONEST
    churn: Optional[np.random.Generator] = None
    windows: list[tuple[Fault, int, Optional[int]]] = field(default_factory=list)


@dataclass
class ClockReport:
    events: int
    ticks: int
    now: int
    cycle: int


def _stable_int(text: str) -> int:
    return int.from_bytes(digest(text.encode("utf-8"))[:8], "big")


class Network:
    def __init__(
        self,
        seed: int,
        cycle_ms: int = 500,
        base_latency_ms: int = 10,
        jitter_ms: int = 0,
        drop_prob: float = 0.0,
        keep_transcript: bool = True,
    ):
        if cycle_ms < 2:
            raise ValueError("cycle_ms must be at least 2")
        self.seed = seed
        self.cycle_ms = cycle_ms
        self.base_latency_ms = base_latency_ms
        self.jitter_ms = jitter_ms
        self.drop_prob = drop_prob
        self.rng = np.random.default_rng([seed, _stable_int("net")])
        self.now = 0
        self.cycle = 0
        self.nodes: dict[str, NodeState] = {}
        self.transcript: list[str] = []
        self.keep_transcript = keep_transcript
        self.on_cycle: list[Callable[[int, int], None]] = []
        self.on_deliver: Callable[[Message], None] = lambda msg: None
        self._queue: list[tuple[int, int, SimEvent]] = []
        self._seq = 0
        self._started = False
        self.executed = 0

    # ------------------------------------------------------------------ nodes

    def spawn_node(self, profile: NodeProfile) -> str:
        nid = profile.node_id
        if nid in self.nodes:
            raise DuplicateNode(nid)
        state = NodeState(profile, fault=profile.fault)
        if profile.node_class is NodeClass.MOBILE:
            state.churn = np.random.default_rng([self.seed, _stable_int("churn|" + nid)])
            state.up = bool(state.churn.random() < profile.availability)
        self.nodes[nid] = state
        return nid

    def node(self, node_id: str) -> NodeState:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownNode(node_id) from None

    def is_up(self, node_id: str) -> bool:
        return self.node(node_id).up

    def fault_of(self, node_id: str) -> Fault:
        return self.node(node_id).fault

    def active_nodes(self) -> list[str]:
        return sorted(n for n, s in self.nodes.items() if s.up)

    def inject_fault(
        self, node_id: str, fault: Fault, from_cycle: int = 0, to_cycle: Optional[int] = None
    ) -> str:
        state = self.node(node_id)
        state.windows.append((fault, from_cycle, to_cycle))
        start = from_cycle * self.cycle_ms - 1
        if start <= self.now:
            self._toggle(node_id, fault)
        else:
            self._push(start, EventKind.FAULT_TOGGLE, (node_id, fault))
        if to_cycle is not None:
            self._push((to_cycle + 1) * self.cycle_ms - 1, EventKind.FAULT_TOGGLE,
                       (node_id, Fault.HONEST))
        return f"ack {node_id} {fault.value} {from_cycle}..{to_cycle if to_cycle is not None else 'end'}"

    def _toggle(self, node_id: str, fault: Fault):
        self.nodes[node_id].fault = fault

    # --------------------------------------------------------------- messages

    def latency(self) -> int:
        jitter = int(self.rng.integers(0, self.jitter_ms + 1)) if self.jitter_ms > 0 else 0
        return self.base_latency_ms + jitter

    def send(self, src: Optional[str], dst: str, kind: str, body=None, size: int = 0) -> Message:
        """Schedule a delivery; the returned message says whether it was dropped.

        ``src`` None stands for an external client. A message reaches its
        destination only if it survives the loss draw and the destination is
        up when it arrives.
        """
        if src is not None and not self.node(src).up:
            raise UnknownNode(f"{src} is not active")
        target = self.node(dst)
        msg = Message(src, dst, kind, body, size, self.now)
        lat = self.latency()
        if self.drop_prob > 0 and self.rng.random() < self.drop_prob:
            msg.dropped, msg.reason = True, "loss"
        at = self.now + lat
        msg.arrives_at = at
        if not msg.dropped and not target.up and at < self.next_churn_time():
            msg.dropped, msg.reason = True, "down"
        self._push(at, EventKind.DELIVER, msg)
        return msg

    def arrived(self, msg: Message, deadline: int) -> bool:
        """True when a message sent this instant lands by ``deadline`` at a live node."""
        return not msg.dropped and msg.arrives_at <= deadline and self.nodes[msg.dst].up

    def next_churn_time(self) -> int:
        return (self.cycle + 1) * self.cycle_ms - 1

    # ------------------------------------------------------------------ clock

    def _push(self, at: int, kind: EventKind, payload=None):
        self._seq += 1
        ev = SimEvent(at, self._seq, kind, payload)
        heapq.heappush(self._queue, (at, self._seq, ev))

    def _start(self):
        if not self._started:
            self._started = True
            self._push(self.cycle_ms, EventKind.CYCLE_TICK, 1)

    def step(self) -> Optional[SimEvent]:
        self._start()
        if not self._queue:
            return None
        at, _, ev = heapq.heappop(self._queue)
        assert at >= self.now, "clock went backwards"
        self.now = at
        self._execute(ev)
        self.executed += 1
        if self.keep_transcript:
            self.transcript.append(ev.line())
        return ev

    def _execute(self, ev: SimEvent):
        kind = ev.kind
        if kind is EventKind.DELIVER:
            msg: Message = ev.payload
            if not msg.dropped:
                if not self.nodes[msg.dst].up:
                    msg.dropped, msg.reason = True, "down"
                else:
                    self.on_deliver(msg)
        elif kind is EventKind.CYCLE_TICK:
            self.cycle = ev.payload
            for handler in self.on_cycle:
                handler(self.cycle, self.now)
            self._schedule_churn()
            self._push(self.now + self.cycle_ms, EventKind.CYCLE_TICK, self.cycle + 1)
        elif kind is EventKind.NODE_UP:
            self.nodes[ev.payload].up = True
        elif kind is EventKind.NODE_DOWN:
            self.nodes[ev.payload].up = False
        elif kind is EventKind.FAULT_TOGGLE:
            node_id, fault = ev.payload
            self._toggle(node_id, fault)

    def _schedule_churn(self):
        at = self.next_churn_time()
        for nid in sorted(self.nodes):
            state = self.nodes[nid]
            if state.churn is None:
                continue
            up_next = bool(state.churn.random() < state.profile.availability)
            if up_next != state.up:
                self._push(at, EventKind.NODE_UP if up_next else EventKind.NODE_DOWN, nid)

    def run_until(self, time: Optional[int] = None, cycle: Optional[int] = None) -> ClockReport:
        if (time is None) == (cycle is None):
            raise ValueError("give exactly one of time or cycle")
        self._start()
        ticks = 0
        events = 0
        while self._queue:
            at, _, ev = self._queue[0]
            if time is not None and at > time:
                break
            if cycle is not None and self.cycle >= cycle:
                break
            self.step()
            events += 1
            if ev.kind is EventKind.CYCLE_TICK:
                ticks += 1
        if time is not None:
            self.now = max(self.now, time)
        return ClockReport(events, ticks, self.now, self.cycle)
