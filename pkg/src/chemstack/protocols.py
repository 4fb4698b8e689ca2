"""Protocol modules of the composition space, plus the traffic endpoints.

Header sizes: Ethernet 18 B (header + FCS), IPv4 20 B, UDP 8 B, TCP-lite
20 B (+12 B with timestamps). PubSub adds no header.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Dict, List, Optional

from .crc import crc_spec
from .errors import ConfigurationError
from .packet import APP_ACK, DATA, TCP_ACK, Packet
from .stack.spec import (INSTANCE, INTERFACE, ModuleSpec, Registry, StackModule,
                         choice_control)

ETHERNET_BYTES = 18
IPV4_BYTES = 20
UDP_BYTES = 8
TCP_BYTES = 20
TCP_TIMESTAMP_BYTES = 12
TCP_SACK_BYTES = 8
APP_ACK_BYTES = 64
PORT_BASE = 5000

ETHERTYPE_IPV4 = "ipv4"


class PubSub(StackModule):
    """Fixed top of the stack; the application binding point."""

    kind = "pubsub"

    def send(self, packet) -> None:
        packet.timestamps.setdefault("app_send", self.node.now)
        self.lower.send(packet)

    def receive(self, packet) -> None:
        self.node.deliver(packet)


class Ethernet(StackModule):
    """Fixed bottom of the stack.

    The ethertype is taken from the module directly above, so only frames
    handed down by IPv4 are routable on the inter-node link.
    """

    kind = "ethernet"

    def __init__(self, spec, params=None):
        super().__init__(spec, params)
        self.bytes_sent = 0
        self.frames_sent = 0
        self.bytes_received = 0
        self.frames_received = 0

    def send(self, packet) -> None:
        upper = self.upper.kind if self.upper is not None else "none"
        ethertype = ETHERTYPE_IPV4 if upper == "ipv4" else upper
        packet.push("ethernet", ETHERNET_BYTES, ethertype=ethertype)
        size = packet.wire_len
        self.bytes_sent += size
        self.frames_sent += 1
        self.node.on_phy_send(packet, size)
        self.node.link_send(packet)

    def receive(self, packet) -> None:
        if packet.pop("ethernet") is None:
            self.node.count_drop("ethernet-header", packet)
            return
        self.bytes_received += packet.wire_len
        self.frames_received += 1
        super().receive(packet)

    def sensors(self):
        return {"phy_rate": self.node.phy_rate() if self.node else 0.0,
                "bytes_sent": float(self.bytes_sent)}

    def save_state(self):
        return {"bytes_sent": self.bytes_sent, "frames_sent": self.frames_sent,
                "bytes_received": self.bytes_received, "frames_received": self.frames_received}

    def restore_state(self, blob):
        self.bytes_sent = blob["bytes_sent"]
        self.frames_sent = blob["frames_sent"]
        self.bytes_received = blob["bytes_received"]
        self.frames_received = blob["frames_received"]


class IPv4(StackModule):
    kind = "ipv4"

    def send(self, packet) -> None:
        packet.push("ipv4", IPV4_BYTES, src=self.node.name, dst=self.node.peer_name)
        self.lower.send(packet)

    def receive(self, packet) -> None:
        if packet.pop("ipv4") is None:
            self.node.count_drop("ipv4-header", packet)
            return
        super().receive(packet)


def _binding(module: StackModule, packet) -> int:
    """Port for a packet: flows get their own port only when the transport
    sits directly under the application binding."""
    if module.upper is not None and module.upper.kind == "pubsub":
        return PORT_BASE + packet.flow_id
    return 0


class UDP(StackModule):
    kind = "udp"

    def send(self, packet) -> None:
        packet.push("udp", UDP_BYTES, port=_binding(self, packet))
        self.lower.send(packet)

    def receive(self, packet) -> None:
        header = packet.pop("udp")
        if header is None:
            self.node.count_drop("udp-header", packet)
            return
        if header.fields["port"]:
            packet.meta["port"] = header.fields["port"]
        super().receive(packet)


class _Connection:
    __slots__ = ("port", "next_seq", "outstanding", "backlog", "rtt", "rto", "timer_version",
                 "timer_at", "received", "next_expected", "measured")

    def __init__(self, port):
        self.port = port
        self.next_seq = 0
        self.outstanding: Dict[int, list] = {}  # seq -> [packet, sent_at, retransmitted]
        self.backlog: deque = deque()
        self.rtt = None
        self.rto = TcpLite.INITIAL_RTO
        self.timer_version = 0
        self.timer_at = None
        self.received = set()
        self.next_expected = 0
        self.measured = False


class TcpLite(StackModule):
    """Minimal sliding-window transport.

    Controls: ``ack`` (cumulative | selective), ``retransmission``
    (off | timeout) and ``timestamps`` (off | on). The window is 16
    segments and the retransmission timeout is twice the measured RTT.
    Without timestamps the RTT is sampled once, from the first segment
    acknowledged without retransmission; with timestamps every ACK
    refreshes it. With retransmission off, unacknowledged segments are
    abandoned at the timeout so the window cannot stall.
    """

    kind = "tcp"
    WINDOW = 16
    INITIAL_RTO = 1.0

    def __init__(self, spec, params=None):
        super().__init__(spec, params)
        self.selective = self.params.get("ack", "cumulative") == "selective"
        self.retransmit = self.params.get("retransmission", "timeout") == "timeout"
        self.timestamps = self.params.get("timestamps", "off") == "on"
        self.connections: Dict[int, _Connection] = {}
        self.retransmissions = 0
        self.abandoned = 0

    @property
    def header_len(self) -> int:
        return TCP_BYTES + (TCP_TIMESTAMP_BYTES if self.timestamps else 0)

    def _conn(self, port: int) -> _Connection:
        conn = self.connections.get(port)
        if conn is None:
            conn = self.connections[port] = _Connection(port)
        return conn

    def send(self, packet) -> None:
        port = _binding(self, packet)
        if packet.kind != DATA:
            packet.push("tcp", self.header_len, port=port, seq=None, control=True)
            self.lower.send(packet)
            return
        conn = self._conn(port)
        conn.backlog.append(packet)
        self._pump(conn)

    def _pump(self, conn: _Connection) -> None:
        while conn.backlog and len(conn.outstanding) < self.WINDOW:
            packet = conn.backlog.popleft()
            seq = conn.next_seq
            conn.next_seq += 1
            conn.outstanding[seq] = [packet, 0.0, False]
            self._transmit(conn, seq)

    def _transmit(self, conn: _Connection, seq: int) -> None:
        entry = conn.outstanding[seq]
        now = self.node.now
        entry[1] = now
        segment = entry[0].clone()
        if entry[2]:
            segment.retransmission = True
        segment.push("tcp", self.header_len, port=conn.port, seq=seq,
                     ts=now if self.timestamps else None)
        self._arm(conn)
        self.lower.send(segment)

    def _arm(self, conn: _Connection) -> None:
        if not conn.outstanding:
            conn.timer_at = None
            return
        oldest = min(e[1] for e in conn.outstanding.values())
        due = max(oldest + conn.rto, self.node.now)
        if conn.timer_at is not None and conn.timer_at <= due:
            return
        conn.timer_version += 1
        conn.timer_at = due
        self.node.schedule(due, self._on_timer, conn, conn.timer_version)

    def _on_timer(self, conn: _Connection, version: int) -> None:
        if version != conn.timer_version:
            return
        conn.timer_at = None
        now = self.node.now
        expired = sorted(seq for seq, e in conn.outstanding.items() if e[1] + conn.rto <= now + 1e-12)
        if expired and not self.selective and self.retransmit:
            # Go-back-N: everything from the first hole onwards is resent.
            expired = sorted(conn.outstanding)
        for seq in expired:
            if self.retransmit:
                conn.outstanding[seq][2] = True
                self.retransmissions += 1
                self._transmit(conn, seq)
            else:
                del conn.outstanding[seq]
                self.abandoned += 1
        self._arm(conn)
        self._pump(conn)

    def receive(self, packet) -> None:
        header = packet.pop("tcp")
        if header is None:
            self.node.count_drop("tcp-header", packet)
            return
        fields = header.fields
        if packet.kind == TCP_ACK:
            self._on_ack(fields)
            return
        if fields.get("control"):
            if fields["port"]:
                packet.meta["port"] = fields["port"]
            super().receive(packet)
            return
        self._on_segment(packet, fields)

    def _on_segment(self, packet, fields) -> None:
        port = fields["port"]
        conn = self._conn(port)
        seq = fields["seq"]
        duplicate = seq in conn.received or seq < conn.next_expected
        if not duplicate:
            conn.received.add(seq)
            while conn.next_expected in conn.received:
                conn.received.discard(conn.next_expected)
                conn.next_expected += 1
        ack = Packet(0, packet.flow_id, seq, self.node.now, TCP_ACK)
        size = self.header_len + (TCP_SACK_BYTES if self.selective else 0)
        ack.push("tcp", size, port=port, ack=conn.next_expected,
                 sack=tuple(sorted(conn.received)) if self.selective else (),
                 echo=fields.get("ts"), seq_acked=seq)
        self.lower.send(ack)
        if duplicate:
            self.node.count_drop("tcp-duplicate", packet)
            return
        if port:
            packet.meta["port"] = port
        super().receive(packet)

    def _on_ack(self, fields) -> None:
        conn = self.connections.get(fields["port"])
        if conn is None:
            return
        now = self.node.now
        acked = [s for s in conn.outstanding if s < fields["ack"]]
        acked.extend(s for s in fields["sack"] if s in conn.outstanding)
        sample = None
        if self.timestamps and fields.get("echo") is not None:
            sample = now - fields["echo"]
        elif not conn.measured:
            entry = conn.outstanding.get(fields["seq_acked"])
            if entry is not None and not entry[2]:
                sample = now - entry[1]
        if sample is not None and sample > 0:
            conn.rtt = sample
            conn.rto = 2.0 * sample
            conn.measured = True
        for s in acked:
            conn.outstanding.pop(s, None)
        conn.timer_at = None
        conn.timer_version += 1
        self._arm(conn)
        self._pump(conn)

    def flush(self) -> None:
        for conn in self.connections.values():
            conn.timer_version += 1

    def save_state(self):
        return {"connections": {port: {"next_seq": c.next_seq, "rtt": c.rtt, "rto": c.rto,
                                       "next_expected": c.next_expected}
                                for port, c in self.connections.items()}}

    def restore_state(self, blob):
        for port, st in blob.get("connections", {}).items():
            conn = self._conn(int(port))
            conn.next_seq = st["next_seq"]
            conn.rtt = st["rtt"]
            conn.rto = st["rto"]
            conn.next_expected = st["next_expected"]


def pubsub_build(params=None) -> StackModule:
    return PubSub(PUBSUB_SPEC, params)


def ethernet_build(params=None) -> StackModule:
    return Ethernet(ETHERNET_SPEC, params)


def ipv4_build(params=None) -> StackModule:
    return IPv4(IPV4_SPEC, params)


def udp_build(params=None) -> StackModule:
    return UDP(UDP_SPEC, params)


def tcp_lite_build(params=None) -> StackModule:
    params = dict(params or {})
    for name, allowed in (("ack", ("cumulative", "selective")), ("retransmission", ("off", "timeout")),
                          ("timestamps", ("off", "on"))):
        if name in params and params[name] not in allowed:
            raise ConfigurationError(f"tcp: {name} must be one of {allowed}, got {params[name]!r}")
    return TcpLite(TCP_SPEC, params)


PUBSUB_SPEC = ModuleSpec("pubsub", provides="application", requires=("datagram",),
                         factory=PubSub)
ETHERNET_SPEC = ModuleSpec("ethernet", provides="datagram", sensors=("phy_rate",),
                           header_bytes=ETHERNET_BYTES, scope=INSTANCE, factory=Ethernet)
IPV4_SPEC = ModuleSpec("ipv4", provides="datagram", requires=("datagram",),
                       header_bytes=IPV4_BYTES, factory=IPv4)
UDP_SPEC = ModuleSpec("udp", provides="datagram", requires=("datagram",),
                      header_bytes=UDP_BYTES, scope=INTERFACE, factory=UDP)
TCP_SPEC = ModuleSpec(
    "tcp", provides="datagram", requires=("datagram",),
    controls=(choice_control("ack", ("cumulative", "selective")),
              choice_control("retransmission", ("off", "timeout")),
              choice_control("timestamps", ("off", "on"))),
    header_bytes=TCP_BYTES, scope=INTERFACE, factory=lambda spec, params: tcp_lite_build(params))

HEAD_KIND = "pubsub"
TAIL_KIND = "ethernet"


def default_registry(crc=None) -> Registry:
    """Module table in canonical genome order: head, TCP, UDP, CRC, IPv4, tail."""
    return Registry([PUBSUB_SPEC, TCP_SPEC, UDP_SPEC, crc or crc_spec(), IPV4_SPEC, ETHERNET_SPEC])


# --- traffic endpoints -------------------------------------------------------

@dataclass
class SourceProfile:
    """On/off bursty source. ``mean_rate`` is in payload bytes/s.

    During on-phases packets arrive as a Poisson process at
    ``mean_rate * (on + off) / on``; nothing is sent while off.
    ``phases`` is ``exponential`` (random durations with the given means)
    or ``fixed``.
    """

    mean_rate: float
    on_duration: float = 0.5
    off_duration: float = 0.5
    phases: str = "exponential"
    payload_len: int = 1000
    file_size: int = 400_000

    def __post_init__(self):
        if self.mean_rate < 0:
            raise ConfigurationError("mean_rate must be >= 0")
        if self.on_duration <= 0 or self.off_duration < 0:
            raise ConfigurationError("on_duration must be > 0 and off_duration >= 0")
        if self.phases not in ("exponential", "fixed"):
            raise ConfigurationError(f"unknown phase model {self.phases!r}")
        if self.payload_len <= 0:
            raise ConfigurationError("payload_len must be positive")

    @property
    def burst_rate(self) -> float:
        """Packets/s during on-phases."""
        period = self.on_duration + self.off_duration
        return self.mean_rate / self.payload_len * period / self.on_duration


class OnOffSource:
    """Stateful packet generator for one flow."""

    def __init__(self, profile: SourceProfile, rng, flow_id: int = 0, t0: float = 0.0):
        self.profile = profile
        self.rng = rng
        self.flow_id = flow_id
        self.seq = 0
        self.bytes = 0
        self._on = True
        self._phase_end = t0 + self._duration(True)
        self._t = t0
        self._pending: Optional[float] = None

    def _duration(self, on: bool) -> float:
        p = self.profile
        mean = p.on_duration if on else p.off_duration
        if p.phases == "fixed" or mean == 0:
            return mean
        return self.rng.expovariate(1.0 / mean)

    def is_on(self, t: float) -> bool:
        """Phase at ``t`` (advances the phase process; only call with t >= last)."""
        while t >= self._phase_end:
            self._on = not self._on
            self._phase_end += self._duration(self._on)
        return self._on

    def next_arrival(self) -> float:
        rate = self.profile.burst_rate
        if rate <= 0:
            return math.inf
        t = self._t
        while True:
            if not self.is_on(t):
                t = self._phase_end
                continue
            t_next = t + self.rng.expovariate(rate)
            if t_next < self._phase_end:
                self._t = t_next
                return t_next
            t = self._phase_end

    def make_packet(self, t: float) -> Packet:
        p = Packet(self.profile.payload_len, self.flow_id, self.seq, t, DATA)
        p.meta["file"] = self.bytes // self.profile.file_size
        self.seq += 1
        self.bytes += p.payload_len
        return p

    def step(self, t: float) -> List[Packet]:
        """All packets generated up to and including time ``t``."""
        out = []
        while True:
            t_next = self._pending
            if t_next is None:
                t_next = self.next_arrival()
            if t_next > t:
                self._pending = t_next
                return out
            self._pending = None
            out.append(self.make_packet(t_next))


def source_step(source: OnOffSource, t: float) -> List[Packet]:
    return source.step(t)


class Sink:
    """Receiving application: counts deliveries and acknowledges each packet.

    Without a port the sink cannot tell concurrent flows apart and books
    everything to flow 0.
    """

    def __init__(self, ack_bytes: int = APP_ACK_BYTES):
        self.ack_bytes = ack_bytes
        self.delivered: Dict[int, int] = {}
        self.delivered_bytes = 0
        self.attributed = 0
        self.misattributed = 0
        self.duplicates = 0
        self.delays: List[float] = []
        self.records: List[tuple] = []  # (time, flow, seq, bytes, correct, created)
        self._seen = set()

    def receive(self, packet, now: float) -> Optional[Packet]:
        if packet.kind != DATA:
            return None
        key = (packet.flow_id, packet.seq)
        ack = Packet(self.ack_bytes, packet.flow_id, packet.seq, now, APP_ACK)
        if key in self._seen:
            self.duplicates += 1
            packet.meta["duplicate"] = True
            return ack
        self._seen.add(key)
        port = packet.meta.get("port")
        flow = port - PORT_BASE if port else 0
        correct = flow == packet.flow_id
        self.delivered[flow] = self.delivered.get(flow, 0) + 1
        self.delivered_bytes += packet.payload_len
        if correct:
            self.attributed += 1
        else:
            self.misattributed += 1
        self.delays.append(now - packet.created)
        self.records.append((now, packet.flow_id, packet.seq, packet.payload_len, correct,
                             packet.created))
        return ack

    @property
    def attribution_ratio(self) -> float:
        total = self.attributed + self.misattributed
        return self.attributed / total if total else 0.0


def sink_receive(sink: Sink, packet, now: float = 0.0) -> Optional[Packet]:
    return sink.receive(packet, now)
