"""Two nodes joined by a duplex link: the traffic source on ``a``, the
acknowledging sink on ``b``. Both run the same stack blueprint."""

from __future__ import annotations

import math
import random
from collections import Counter
from typing import List, Optional

from ..errors import InternalError
from ..packet import APP_ACK, DATA
from ..protocols import OnOffSource, Sink
from .calendar import EventCalendar
from .link import Link


def stream(seed: int, name: str) -> random.Random:
    """Independent named random stream derived from a trial seed."""
    return random.Random(f"{int(seed)}/{name}")


class Node:
    def __init__(self, name: str, peer_name: str, calendar: EventCalendar, rng: random.Random,
                 n_bins: int):
        self.name = name
        self.peer_name = peer_name
        self.calendar = calendar
        self.rng = rng
        self.stack = None
        self.link: Optional[Link] = None
        self.peer: Optional["Node"] = None
        self.app = None
        self.phy_bins = [0.0] * n_bins
        self.phy_log: List[tuple] = []  # (time, wire bytes, kind, flow, seq, retransmission)
        self.drops = Counter()
        self.in_flight = 0

    @property
    def now(self) -> float:
        return self.calendar.now

    def schedule(self, t: float, fn, *args) -> None:
        self.calendar.schedule(t, fn, *args)

    def on_phy_send(self, packet, size: int) -> None:
        t = self.calendar.now
        b = int(t)
        if b < len(self.phy_bins):
            self.phy_bins[b] += size
        self.phy_log.append((t, size, packet.kind, packet.flow_id, packet.seq, packet.retransmission))

    def phy_rate(self) -> float:
        """Bytes sent during the last complete 1 s bin."""
        b = int(self.calendar.now) - 1
        return self.phy_bins[b] if 0 <= b < len(self.phy_bins) else 0.0

    def link_send(self, frame) -> None:
        t = self.link.transmit(frame, self.calendar.now)
        if t is None:
            return
        self.peer.in_flight += 1
        self.calendar.schedule(t, self.peer.receive_frame, frame)

    def receive_frame(self, frame) -> None:
        self.in_flight -= 1
        self.stack.receive(frame)

    def deliver(self, packet) -> None:
        self.app(packet)

    def count_drop(self, reason: str, packet) -> None:
        self.drops[reason] += 1


class World:
    """Everything one trial needs. ``stacks`` are two composed stacks of the
    same blueprint (sender first)."""

    def __init__(self, scenario, stacks, seed: int, duration: float):
        self.scenario = scenario
        self.duration = duration
        n_bins = max(1, math.ceil(duration - 1e-9))
        self.calendar = EventCalendar()
        self.a = Node("a", "b", self.calendar, stream(seed, "a/chem"), n_bins)
        self.b = Node("b", "a", self.calendar, stream(seed, "b/chem"), n_bins)
        link = scenario.link
        self.link_ab = Link(link.bandwidth, link.delay, link.loss, link.buffer, link.cross_traffic,
                            rng=stream(seed, "ab/loss"), cross_rng=stream(seed, "ab/cross"))
        self.link_ba = Link(link.bandwidth, link.delay, link.loss, link.buffer, None,
                            rng=stream(seed, "ba/loss"))
        self.a.link, self.a.peer = self.link_ab, self.b
        self.b.link, self.b.peer = self.link_ba, self.a
        self.a.stack, self.b.stack = stacks
        self.a.stack.attach(self.a)
        self.b.stack.attach(self.b)
        self.sink = Sink()
        self.acks = 0
        self.app_bins = [0.0] * n_bins
        self.generated = 0
        self.generated_bytes = 0
        self.a.app = self._on_source_app
        self.b.app = self._on_sink_app
        self.sources = [OnOffSource(scenario.source, stream(seed, f"source/{f}"), flow_id=f)
                        for f in range(scenario.flows)]
        for src in self.sources:
            t = src.next_arrival()
            if t < duration:
                self.calendar.schedule(t, self._generate, src, t)

    def _generate(self, src: OnOffSource, t: float) -> None:
        packet = src.make_packet(t)
        self.generated += 1
        self.generated_bytes += packet.payload_len
        b = int(t)
        if b < len(self.app_bins):
            self.app_bins[b] += packet.payload_len
        self.a.stack.send(packet)
        t_next = src.next_arrival()
        if t_next < self.duration:
            self.calendar.schedule(t_next, self._generate, src, t_next)

    def _on_sink_app(self, packet) -> None:
        ack = self.sink.receive(packet, self.calendar.now)
        if ack is not None:
            self.b.stack.send(ack)

    def _on_source_app(self, packet) -> None:
        if packet.kind == APP_ACK:
            self.acks += 1

    def run(self) -> None:
        self.calendar.run_until(self.duration)

    def resident_packets(self) -> int:
        """Data packets held in the sender's CRC, if any."""
        crc = self.a.stack.module("crc")
        return 0 if crc is None or crc.crc is None else crc.crc.in_flight()

    def check_conservation(self) -> None:
        """Generated = delivered + dropped + buffered + on the wire, for
        stacks without retransmission."""
        if self.a.stack.module("tcp") is not None:
            raise InternalError("conservation check does not apply to retransmitting stacks")
        data_dropped = sum(self.link_ab.drops.values())
        stack_drops = sum(self.b.drops.values())
        total = (self.sink.attributed + self.sink.misattributed + data_dropped + stack_drops
                 + self.resident_packets() + self._data_in_flight())
        if total != self.generated:
            raise InternalError(f"world accounting: generated {self.generated} != {total}")

    def _data_in_flight(self) -> int:
        return sum(1 for _, _, fn, args in self.calendar._heap
                   if fn == self.b.receive_frame and args[0].kind == DATA)
