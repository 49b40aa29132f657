"""Deterministic discrete-event message fabric.

Single-threaded event loop over a priority queue of (time, seq) keyed
events. All randomness (latency draws, drops) comes from one seeded RNG,
so an identical configuration replays to an identical event trace. Nodes
are plain objects exposing on_message / on_timer; byzantine behaviors
(silent, equivocate, delay) are applied at the fabric boundary.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field
from typing import Callable, Optional

BEHAVIOR_SILENT = "silent"
BEHAVIOR_EQUIVOCATE = "equivocate"
BEHAVIOR_DELAY = "delay"


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class BehaviorRule:
    node: str
    kind: str  # silent | equivocate | delay
    from_ms: int
    to_ms: int
    delay_ms: int = 0  # for kind == delay


@dataclass(frozen=True)
class PartitionRule:
    from_ms: int
    to_ms: int
    groups: tuple[frozenset, ...]  # cross-group traffic is dropped


@dataclass(order=True)
class _Event:
    time_ms: int
    seq: int
    kind: str = field(compare=False)
    payload: dict = field(compare=False, default_factory=dict)


class Node:
    """Interface the fabric drives; concrete nodes override what they need."""

    node_id: str

    def on_message(self, sender: str, message: dict, now_ms: int) -> None:
        pass

    def on_timer(self, tag: str, now_ms: int) -> None:
        pass


class Simulator:
    def __init__(
        self,
        seed: int,
        latency_ms: tuple[int, int] | int = 10,
        drop_prob: float = 0.0,
        partitions: Optional[list[PartitionRule]] = None,
        behaviors: Optional[list[BehaviorRule]] = None,
    ):
        self.rng = random.Random(seed)
        self.now_ms = 0
        self._seq = 0
        self._queue: list[_Event] = []
        self.nodes: dict[str, Node] = {}
        if isinstance(latency_ms, int):
            self.latency = (latency_ms, latency_ms)
        else:
            self.latency = (latency_ms[0], latency_ms[1])
        self.drop_prob = drop_prob
        self.partitions = partitions or []
        self.behaviors = behaviors or []
        self.trace: list[str] = []
        self._delivered = 0
        self._dropped = 0

    # --- roster ---------------------------------------------------------

    def add_node(self, node: Node) -> None:
        self.nodes[node.node_id] = node

    def behavior_at(self, node_id: str, now_ms: Optional[int] = None) -> Optional[BehaviorRule]:
        t = self.now_ms if now_ms is None else now_ms
        for rule in self.behaviors:
            if rule.node == node_id and rule.from_ms <= t < rule.to_ms:
                return rule
        return None

    def _partitioned(self, a: str, b: str) -> bool:
        for rule in self.partitions:
            if rule.from_ms <= self.now_ms < rule.to_ms:
                ga = gb = None
                for i, group in enumerate(rule.groups):
                    if a in group:
                        ga = i
                    if b in group:
                        gb = i
                if ga is not None and gb is not None and ga != gb:
                    return True
        return False

    # --- event scheduling ----------------------------------------------

    def _push(self, time_ms: int, kind: str, payload: dict) -> None:
        self._seq += 1
        heapq.heappush(self._queue, _Event(time_ms, self._seq, kind, payload))

    def send(self, frm: str, to: str, message: dict) -> None:
        if frm not in self.nodes or to not in self.nodes:
            raise ConfigError(f"unknown endpoint in send: {frm} -> {to}")
        behavior = self.behavior_at(frm)
        extra = 0
        if behavior is not None:
            if behavior.kind == BEHAVIOR_SILENT:
                self._dropped += 1
                self._record(f"drop silent {frm}->{to} {message.get('type')}")
                return
            if behavior.kind == BEHAVIOR_DELAY:
                extra = behavior.delay_ms
        if self._partitioned(frm, to):
            self._dropped += 1
            self._record(f"drop partition {frm}->{to} {message.get('type')}")
            return
        if self.drop_prob > 0 and self.rng.random() < self.drop_prob:
            self._dropped += 1
            self._record(f"drop random {frm}->{to} {message.get('type')}")
            return
        latency = (
            self.latency[0]
            if self.latency[0] == self.latency[1]
            else self.rng.randint(self.latency[0], self.latency[1])
        )
        at = self.now_ms + latency + extra
        self._record(f"send {frm}->{to} {message.get('type')} deliver@{at}")
        self._push(at, "deliver", {"frm": frm, "to": to, "message": message})

    def broadcast(self, frm: str, targets: list[str], message: dict) -> None:
        for to in targets:
            if to != frm:
                self.send(frm, to, message)

    def set_timer(self, node_id: str, delay_ms: int, tag: str) -> None:
        self._push(self.now_ms + delay_ms, "timer", {"node": node_id, "tag": tag})

    def call_at(self, time_ms: int, fn: Callable[[], None], label: str = "") -> None:
        self._push(time_ms, "call", {"fn": fn, "label": label})

    # --- the loop -------------------------------------------------------

    def step(self) -> bool:
        """Process the next event; returns False when the queue is empty."""
        if not self._queue:
            return False
        event = heapq.heappop(self._queue)
        self.now_ms = event.time_ms
        if event.kind == "deliver":
            p = event.payload
            self._delivered += 1
            self._record(f"deliver {p['frm']}->{p['to']} {p['message'].get('type')}")
            self.nodes[p["to"]].on_message(p["frm"], p["message"], self.now_ms)
        elif event.kind == "timer":
            p = event.payload
            self.nodes[p["node"]].on_timer(p["tag"], self.now_ms)
        elif event.kind == "call":
            if event.payload["label"]:
                self._record(f"call {event.payload['label']}")
            event.payload["fn"]()
        return True

    def run_until(
        self,
        time_ms: Optional[int] = None,
        predicate: Optional[Callable[[], bool]] = None,
        max_time_ms: Optional[int] = None,
    ) -> bool:
        """Run events until the bound or until *predicate* holds.

        Returns True if the predicate (when given) was satisfied, False on
        timeout or queue exhaustion without satisfaction.
        """
        bound = time_ms if time_ms is not None else max_time_ms
        while True:
            if predicate is not None and predicate():
                return True
            if not self._queue:
                return predicate is None
            if bound is not None and self._queue[0].time_ms > bound:
                self.now_ms = bound
                return predicate is None
            self.step()

    def _record(self, line: str) -> None:
        self.trace.append(f"t={self.now_ms} {line}")

    def record_event(self, line: str) -> None:
        self._record(line)

    def export_trace(self) -> str:
        return "\n".join(self.trace) + "\n"

    @property
    def stats(self) -> dict:
        return {"delivered": self._delivered, "dropped": self._dropped}
