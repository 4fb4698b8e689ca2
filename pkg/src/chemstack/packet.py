"""Packets and protocol headers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional

DATA = "data"
APP_ACK = "app-ack"
TCP_ACK = "tcp-ack"
CROSS = "cross"


@dataclass
class Header:
    protocol: str
    length: int
    fields: Dict[str, object] = field(default_factory=dict)


@dataclass(eq=False)
class Packet:
    payload_len: int
    flow_id: int = 0
    seq: int = 0
    created: float = 0.0
    kind: str = DATA
    headers: List[Header] = field(default_factory=list)
    timestamps: Dict[str, float] = field(default_factory=dict)
    retransmission: bool = False
    meta: Dict[str, object] = field(default_factory=dict)

    @property
    def wire_len(self) -> int:
        return self.payload_len + sum(h.length for h in self.headers)

    @property
    def header_bytes(self) -> int:
        return sum(h.length for h in self.headers)

    @property
    def is_control(self) -> bool:
        return self.kind != DATA

    def push(self, protocol: str, length: int, **fields) -> Header:
        header = Header(protocol, length, fields)
        self.headers.append(header)
        return header

    def top(self) -> Optional[Header]:
        return self.headers[-1] if self.headers else None

    def pop(self, protocol: str) -> Optional[Header]:
        """Remove the outermost header if it belongs to ``protocol``."""
        if self.headers and self.headers[-1].protocol == protocol:
            return self.headers.pop()
        return None

    def clone(self) -> "Packet":
        return Packet(self.payload_len, self.flow_id, self.seq, self.created, self.kind,
                      [Header(h.protocol, h.length, dict(h.fields)) for h in self.headers],
                      dict(self.timestamps), self.retransmission, dict(self.meta))
