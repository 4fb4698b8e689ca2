"""One direction of the inter-node link.

Frames are served FIFO at ``bandwidth`` bytes/s behind a drop-tail
buffer, then propagate for ``delay`` seconds. Only IPv4 frames are
routable. Optional cross-traffic competes for the same server.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Optional

from ..errors import ConfigurationError
from ..protocols import ETHERTYPE_IPV4, OnOffSource, SourceProfile

CROSS_FRAME_BYTES = 1000


@dataclass
class CrossTraffic:
    """On/off Poisson frames of 1000 B with long-run mean ``mean_rate`` B/s."""

    mean_rate: float = 0.0
    on_duration: float = 0.2
    off_duration: float = 0.8

    def __post_init__(self):
        if self.mean_rate < 0:
            raise ConfigurationError("cross-traffic mean_rate must be >= 0")
        if self.on_duration <= 0 or self.off_duration < 0:
            raise ConfigurationError("cross-traffic on must be > 0 and off >= 0")


class Link:
    def __init__(self, bandwidth: float, delay: float, loss: float = 0.0,
                 buffer_bytes: Optional[float] = None, cross: Optional[CrossTraffic] = None,
                 rng=None, cross_rng=None):
        if bandwidth <= 0 or delay < 0:
            raise ConfigurationError("link bandwidth must be > 0 and delay >= 0")
        if not 0.0 <= loss <= 1.0:
            raise ConfigurationError("link loss must be in [0, 1]")
        if buffer_bytes is not None and buffer_bytes <= 0:
            raise ConfigurationError("link buffer must be positive")
        self.bandwidth = float(bandwidth)
        self.delay = float(delay)
        self.loss = float(loss)
        self.buffer_bytes = math.inf if buffer_bytes is None else float(buffer_bytes)
        self.rng = rng
        self.busy_until = 0.0
        self.drops = Counter()
        self.sent_frames = 0
        self.sent_bytes = 0
        self.delivered_frames = 0
        self.cross_frames = 0
        self.cross_dropped = 0
        self._cross = None
        self._cross_next = math.inf
        if cross is not None and cross.mean_rate > 0:
            profile = SourceProfile(cross.mean_rate, cross.on_duration, cross.off_duration,
                                    payload_len=CROSS_FRAME_BYTES)
            self._cross = OnOffSource(profile, cross_rng, flow_id=-1)
            self._cross_next = self._cross.next_arrival()

    def backlog(self, t: float) -> float:
        """Bytes waiting for or in serialization at ``t``."""
        return max(0.0, self.busy_until - t) * self.bandwidth

    def _serve(self, t: float, size: int) -> Optional[float]:
        if self.backlog(t) + size > self.buffer_bytes:
            return None
        self.busy_until = max(t, self.busy_until) + size / self.bandwidth
        return self.busy_until

    def _advance_cross(self, t: float) -> None:
        while self._cross_next <= t:
            self.cross_frames += 1
            if self._serve(self._cross_next, CROSS_FRAME_BYTES) is None:
                self.cross_dropped += 1
            self._cross_next = self._cross.next_arrival()

    def transmit(self, frame, t_now: float) -> Optional[float]:
        """Arrival time at the far end, or None when the frame is dropped."""
        self._advance_cross(t_now)
        self.sent_frames += 1
        size = frame.wire_len
        self.sent_bytes += size
        top = frame.top()
        if top is None or top.protocol != "ethernet" or top.fields.get("ethertype") != ETHERTYPE_IPV4:
            self.drops["non-ip"] += 1
            return None
        done = self._serve(t_now, size)
        if done is None:
            self.drops["overflow"] += 1
            return None
        if self.loss and self.rng.random() < self.loss:
            self.drops["loss"] += 1
            return None
        self.delivered_frames += 1
        return done + self.delay

    @property
    def dropped(self) -> int:
        return sum(self.drops.values())


def link_transmit(link: Link, frame, t_now: float) -> Optional[float]:
    return link.transmit(frame, t_now)
