"""Chemical Rate Controller.

Packets wait in the payload species ``S`` and are served by the token
loop ``r1: S + E -> ES``, ``r2: ES -> E + P``. The loop holds ``e0``
tokens, which caps the service rate at ``e0 * k2`` packets/s. With a
positive ``k_F`` the output passes through a first-order stage
``r2: ES -> E + F``, ``r3: F -> P`` that low-pass filters the departures.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from .chem.network import COUNTER, PAYLOAD, TRANSMIT, Reaction, ReactionNetwork, Species
from .chem.scheduler import MODES, STOCHASTIC, ReactionScheduler, make_rng
from .errors import ConfigurationError, InternalError
from .stack.spec import KIND, Control, ModuleSpec, StackModule, choice_control

E0_DOMAIN = (1, 10000)
# Gene table for k_F: 'disabled' plus a 1-2-5 log grid over [0.01, 10].
K_F_CHOICES: Tuple[Optional[float], ...] = (
    None, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0)


@dataclass
class CrcConfig:
    e0: int
    k1: float = 1.0
    k2: float = 1.0
    k_F: float = 0.0
    evolvable: Tuple[str, ...] = ("e0",)
    window: float = 1.0
    mode: str = STOCHASTIC

    def __post_init__(self):
        if int(self.e0) != self.e0 or self.e0 < 1:
            raise ConfigurationError(f"e0 must be an integer >= 1, got {self.e0}")
        self.e0 = int(self.e0)
        if not (self.k1 > 0 and self.k2 > 0):
            raise ConfigurationError("k1 and k2 must be positive")
        if self.k_F is None:
            self.k_F = 0.0
        if self.k_F < 0:
            raise ConfigurationError("k_F must be >= 0 (0 disables the output stage)")
        if self.window <= 0:
            raise ConfigurationError("sensor window must be positive")
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown scheduler mode {self.mode!r}")
        unknown = set(self.evolvable) - {"e0", "k_F"}
        if unknown:
            raise ConfigurationError(f"unknown evolvable control(s) {sorted(unknown)}")

    @property
    def rate_cap(self) -> float:
        return self.e0 * self.k2


def crc_network(e0: int, k1: float = 1.0, k2: float = 1.0,
                k_F: float = 0.0) -> Tuple[ReactionNetwork, Dict[str, int]]:
    """Reaction network of the controller and its initial counts."""
    net = ReactionNetwork([Species("S", PAYLOAD), Species("ES", PAYLOAD), Species("E", COUNTER)])
    net.add_reaction(Reaction("r1", {"S": 1, "E": 1}, {"ES": 1}, k1, k_name="k1"))
    if k_F:
        net.add_species(Species("F", PAYLOAD))
        net.add_reaction(Reaction("r2", {"ES": 1}, {"E": 1, "F": 1}, k2, k_name="k2"))
        net.add_reaction(Reaction("r3", {"F": 1}, {}, k_F, TRANSMIT, k_name="k_F"))
    else:
        net.add_reaction(Reaction("r2", {"ES": 1}, {"E": 1}, k2, TRANSMIT, k_name="k2"))
    return net, {"E": int(e0)}


class _Held:
    __slots__ = ("packet", "t_in")

    def __init__(self, packet, t_in):
        self.packet = packet
        self.t_in = t_in


class CrcState:
    """A running controller: network, scheduler, counters and sensor windows."""

    def __init__(self, config: CrcConfig, rng=None):
        self.config = config
        self.network, initial = crc_network(config.e0, config.k1, config.k2, config.k_F)
        self.state = self.network.initial_state(initial)
        self.scheduler = ReactionScheduler(self.network, self.state, make_rng(rng), config.mode)
        self.e0 = config.e0
        self.enqueued = 0
        self.transmitted = 0
        self.dropped = 0
        self.flushed = 0
        self._token_debt = 0
        self._in_times: deque = deque()
        self._out: deque = deque()  # (time, delay)

    @property
    def clock(self) -> float:
        return self.state.clock

    def count(self, species: str) -> int:
        return self.state.concentrations.get(species, 0)

    def next_time(self) -> Optional[float]:
        nxt = self.scheduler.peek()
        return None if nxt is None else nxt[0]

    def enqueue(self, packet, now: Optional[float] = None) -> None:
        now = self.state.clock if now is None else now
        self.scheduler.inject("S", _Held(packet, now), now)
        self.enqueued += 1
        self._in_times.append(now)

    def fire(self):
        """Fire the next reaction; returns the departing packet, if any."""
        event = self.scheduler.fire()
        packet = None
        if event.emit_tag == TRANSMIT:
            packet = crc_on_transmit(self, event)
        if self._token_debt and self.state.concentrations["E"] > 0:
            self._retire_tokens()
        return packet

    def run_until(self, t_end: float) -> List[Tuple[float, object]]:
        """Advance without external arrivals; returns (time, packet) departures."""
        out = []
        while True:
            t = self.next_time()
            if t is None or t >= t_end:
                break
            packet = self.fire()
            if packet is not None:
                out.append((t, packet))
        if self.state.clock < t_end:
            self.scheduler.advance_to(t_end)
        return out

    def _retire_tokens(self) -> None:
        conc = self.state.concentrations
        n = min(self._token_debt, conc["E"])
        conc["E"] -= n
        self._token_debt -= n
        self.scheduler.touch(self.state.clock)

    def set_e0(self, e0: int) -> None:
        """Reconfigure the token pool. Only free tokens are added or removed;
        tokens bound in ES are retired as they return."""
        if int(e0) != e0 or e0 < 1:
            raise ConfigurationError(f"e0 must be an integer >= 1, got {e0}")
        e0 = int(e0)
        delta = e0 - self.e0
        conc = self.state.concentrations
        if delta > 0:
            absorbed = min(delta, self._token_debt)
            self._token_debt -= absorbed
            conc["E"] += delta - absorbed
        elif delta < 0:
            self._token_debt += -delta
        self.e0 = e0
        self.config.e0 = e0
        if self._token_debt and conc["E"]:
            self._retire_tokens()
        else:
            self.scheduler.touch(self.state.clock)

    def flush(self) -> List[object]:
        """Remove every buffered packet, most advanced first; tokens return to E."""
        queues = self.state.queues
        conc = self.state.concentrations
        held = []
        for species in ("F", "ES", "S"):
            if species in queues:
                held.extend(queues[species])
                queues[species].clear()
                if species == "ES":
                    conc["E"] += conc["ES"]
                conc[species] = 0
        self.flushed += len(held)
        if self._token_debt:
            n = min(self._token_debt, conc["E"])
            conc["E"] -= n
            self._token_debt -= n
        self.scheduler.touch(self.state.clock)
        return [h.packet for h in held]

    def in_flight(self) -> int:
        return self.state.resident_packets()

    def check(self) -> None:
        conc = self.state.concentrations
        self.state.check()
        if conc["E"] + conc["ES"] != self.e0 + self._token_debt:
            raise InternalError(
                f"token conservation violated: E={conc['E']} ES={conc['ES']} e0={self.e0}")
        if self.enqueued != self.in_flight() + self.transmitted + self.flushed:
            raise InternalError("packet accounting violated")

    def sensors(self, now: Optional[float] = None) -> Dict[str, float]:
        now = self.state.clock if now is None else now
        lo = now - self.config.window
        while self._in_times and self._in_times[0] <= lo:
            self._in_times.popleft()
        while self._out and self._out[0][0] <= lo:
            self._out.popleft()
        n_out = len(self._out)
        return {
            "queue_len": float(self.state.concentrations["S"]),
            "in_rate": len(self._in_times) / self.config.window,
            "out_rate": n_out / self.config.window,
            "mean_delay": (sum(d for _, d in self._out) / n_out) if n_out else 0.0,
        }


def clamped_service_rate(config: CrcConfig, c_S: int, duration: float, rng=None,
                         warmup: float = 5.0) -> float:
    """Departures per second with the queue held at ``c_S`` packets.

    Every packet that binds a token is replaced at once, so the loop sees
    a constant ``c_S``; departures during ``warmup`` are not counted.
    """
    if int(c_S) != c_S or c_S < 1:
        raise ConfigurationError("c_S must be a positive integer")
    if duration <= 0 or warmup < 0:
        raise ConfigurationError("duration must be positive and warmup non-negative")
    crc = CrcState(config, rng)
    for i in range(int(c_S)):
        crc.enqueue(i, 0.0)
    t_end = warmup + duration
    n = int(c_S)
    counted = 0
    while True:
        t = crc.next_time()
        if t is None or t >= t_end:
            break
        before = crc.count("S")
        packet = crc.fire()
        if crc.count("S") < before:
            crc.enqueue(n, t)
            n += 1
        if packet is not None and t >= warmup:
            counted += 1
    return counted / duration


def crc_build(config: CrcConfig, rng=None) -> CrcState:
    return CrcState(config, rng)


def crc_enqueue(state: CrcState, packet, now: Optional[float] = None) -> None:
    state.enqueue(packet, now)


def crc_on_transmit(state: CrcState, fired) -> object:
    """Account for a departure fired by the transmit-tagged reaction."""
    held = fired.packet
    if held is None:
        raise InternalError(f"transmit reaction {fired.reaction!r} carried no packet")
    state.transmitted += 1
    state._out.append((fired.time, fired.time - held.t_in))
    return held.packet


def crc_sensors(state: CrcState, now: Optional[float] = None) -> Dict[str, float]:
    return state.sensors(now)


class CrcModule(StackModule):
    """The controller as a stack module. Control packets bypass the queue."""

    kind = "crc"

    def __init__(self, spec: ModuleSpec, params=None):
        super().__init__(spec, params)
        p = self.params
        self.config = CrcConfig(
            e0=int(p.get("e0", 10)), k1=float(p.get("k1", 1.0)), k2=float(p.get("k2", 1.0)),
            k_F=float(p.get("k_F") or 0.0), window=float(p.get("window", 1.0)),
            mode=p.get("mode", STOCHASTIC))
        self.crc: Optional[CrcState] = None
        self._pending_blob = None
        self._version = 0
        self._scheduled = None

    def attach(self, node) -> None:
        super().attach(node)
        self.crc = CrcState(self.config, node.rng)
        self.crc.state.clock = node.now
        self.crc.scheduler.touch(node.now)
        if self._pending_blob is not None:
            blob = self._pending_blob
            self.crc.enqueued = blob["enqueued"]
            self.crc.transmitted = blob["transmitted"]
            self.crc.flushed = blob["flushed"]
            self._pending_blob = None

    def send(self, packet) -> None:
        if packet.is_control:
            self.lower.send(packet)
            return
        self.crc.enqueue(packet, self.node.now)
        self._reschedule()

    def _reschedule(self) -> None:
        t = self.crc.next_time()
        if t == self._scheduled:
            return
        self._version += 1
        self._scheduled = t
        if t is not None:
            self.node.schedule(t, self._on_fire, self._version)

    def _on_fire(self, version: int) -> None:
        if version != self._version:
            return
        self._scheduled = None
        packet = self.crc.fire()
        if packet is not None:
            self.lower.send(packet)
        self._reschedule()

    def sensors(self):
        return self.crc.sensors(self.node.now) if self.crc else {
            "queue_len": 0.0, "in_rate": 0.0, "out_rate": 0.0, "mean_delay": 0.0}

    def flush(self) -> None:
        if self.crc is None:
            return
        self._version += 1
        self._scheduled = None
        for packet in self.crc.flush():
            self.lower.send(packet)

    def save_state(self):
        crc = self.crc
        if crc is None:
            return dict(self._pending_blob or {}) or None
        return {"e0": crc.e0, "tokens_free": crc.count("E"), "enqueued": crc.enqueued,
                "transmitted": crc.transmitted, "flushed": crc.flushed}

    def restore_state(self, blob) -> None:
        # e0 comes from the blueprint; only cumulative counters carry over.
        self._pending_blob = dict(blob)


def crc_spec(e0_domain=E0_DOMAIN, k_F_choices=K_F_CHOICES, fixed=None,
             evolvable=("e0", "k_F")) -> ModuleSpec:
    """Registry entry for the controller.

    ``fixed`` supplies parameters that are not genes (k1, k2, mode, and any
    control left out of ``evolvable``).
    """
    controls = []
    if "e0" in evolvable:
        controls.append(Control("e0", int(e0_domain[0]), int(e0_domain[1])))
    if "k_F" in evolvable:
        controls.append(choice_control("k_F", tuple(k_F_choices)))
    fixed = dict(fixed or {})

    def factory(spec, params):
        merged = dict(fixed)
        merged.update(params)
        return CrcModule(spec, merged)

    return ModuleSpec("crc", provides="datagram", requires=("datagram",), controls=tuple(controls),
                      sensors=("queue_len", "in_rate", "out_rate", "mean_delay"),
                      header_bytes=0, scope=KIND, factory=factory)
