"""Reaction networks over packet-bearing species."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, Optional, Union

from ..errors import ConfigurationError, InternalError

PAYLOAD = "payload"
COUNTER = "counter"
TRANSMIT = "transmit"


@dataclass(frozen=True)
class Species:
    id: str
    kind: str = COUNTER

    def __post_init__(self):
        if self.kind not in (PAYLOAD, COUNTER):
            raise ConfigurationError(f"species {self.id!r}: unknown kind {self.kind!r}")

    @property
    def is_payload(self) -> bool:
        return self.kind == PAYLOAD


@dataclass(frozen=True)
class Reaction:
    """A mass-action reaction.

    ``reactants`` and ``products`` map species ids to stoichiometric
    coefficients. ``k_name`` is the symbolic name of the rate constant
    used when the flow model is printed; it defaults to ``k_<id>``.
    """

    id: str
    reactants: Mapping[str, int]
    products: Mapping[str, int]
    k: float
    emit_tag: Optional[str] = None
    k_name: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "reactants", dict(self.reactants))
        object.__setattr__(self, "products", dict(self.products))
        if not self.reactants:
            raise ConfigurationError(
                f"reaction {self.id!r} has no reactants; model sources with attach_inflow")
        for coeffs in (self.reactants, self.products):
            for s, n in coeffs.items():
                if int(n) != n or n < 0:
                    raise ConfigurationError(
                        f"reaction {self.id!r}: coefficient of {s!r} must be a non-negative integer")
        if not self.k > 0:
            raise ConfigurationError(f"reaction {self.id!r}: rate constant must be > 0, got {self.k}")
        if self.k_name is None:
            object.__setattr__(self, "k_name", f"k_{self.id}")


RateSource = Union[float, int, Callable[[float], float]]


@dataclass
class Inflow:
    """External packet source feeding a payload species.

    ``rate`` is either a constant in packets/s or a callable of simulated
    time. Stochastic arrivals use thinning against ``max_rate``, which
    must bound the callable from above.
    """

    species: str
    rate: RateSource
    max_rate: Optional[float] = None
    name: str = "v_src"
    packet_factory: Optional[Callable[[float, int], object]] = None

    def rate_at(self, t: float) -> float:
        if callable(self.rate):
            return float(self.rate(t))
        return float(self.rate)

    @property
    def bound(self) -> float:
        if self.max_rate is not None:
            return float(self.max_rate)
        if callable(self.rate):
            raise ConfigurationError(
                f"inflow {self.name!r}: time-varying rate needs max_rate for stochastic arrivals")
        return float(self.rate)


class ReactionNetwork:
    """Species, reactions and attached inflows.

    Packet flow is conserved: any reaction consuming a payload species
    either produces exactly one payload molecule or carries the
    ``transmit`` tag, in which case the packet leaves the network.
    """

    def __init__(self, species=(), reactions=()):
        self.species: Dict[str, Species] = {}
        self.reactions: List[Reaction] = []
        self.inflows: List[Inflow] = []
        for s in species:
            self.add_species(s)
        for r in reactions:
            self.add_reaction(r)

    def add_species(self, species: Species) -> Species:
        if species.id in self.species:
            raise ConfigurationError(f"species {species.id!r} declared twice")
        self.species[species.id] = species
        return species

    def add_reaction(self, reaction: Reaction) -> Reaction:
        if any(r.id == reaction.id for r in self.reactions):
            raise ConfigurationError(f"reaction {reaction.id!r} declared twice")
        for s in list(reaction.reactants) + list(reaction.products):
            if s not in self.species:
                raise ConfigurationError(f"reaction {reaction.id!r} references undeclared species {s!r}")
        payload_in = sum(n for s, n in reaction.reactants.items() if self.species[s].is_payload)
        payload_out = sum(n for s, n in reaction.products.items() if self.species[s].is_payload)
        if payload_in:
            if reaction.emit_tag == TRANSMIT:
                if payload_out:
                    raise ConfigurationError(
                        f"reaction {reaction.id!r}: transmit reaction must not also produce payload")
            elif payload_out != 1:
                raise ConfigurationError(
                    f"reaction {reaction.id!r}: consumes payload, so it must produce exactly one "
                    f"payload molecule or be tagged '{TRANSMIT}'")
        elif payload_out:
            raise ConfigurationError(
                f"reaction {reaction.id!r}: produces payload without consuming any")
        self.reactions.append(reaction)
        return reaction

    def reaction(self, rid: str) -> Reaction:
        for r in self.reactions:
            if r.id == rid:
                return r
        raise KeyError(rid)

    @property
    def species_ids(self) -> List[str]:
        return list(self.species)

    @property
    def payload_species(self) -> List[str]:
        return [s for s, sp in self.species.items() if sp.is_payload]

    def initial_state(self, counts: Optional[Mapping[str, int]] = None) -> "NetworkState":
        """Fresh state; payload species start empty, counters from ``counts``."""
        counts = dict(counts or {})
        state = NetworkState(self)
        for sid, n in counts.items():
            if sid not in self.species:
                raise ConfigurationError(f"unknown species {sid!r}")
            if self.species[sid].is_payload:
                raise ConfigurationError(
                    f"payload species {sid!r} cannot be seeded with a bare count; enqueue packets")
            if int(n) != n or n < 0:
                raise ConfigurationError(f"count for {sid!r} must be a non-negative integer")
            state.concentrations[sid] = int(n)
        return state


def attach_inflow(network: ReactionNetwork, species: str, rate_source: RateSource,
                  max_rate: Optional[float] = None, name: str = "v_src",
                  packet_factory=None) -> Inflow:
    """Register an external packet source on a payload species.

    Arrivals are interleaved with reaction firings by the scheduler.
    """
    sp = network.species.get(species)
    if sp is None:
        raise ConfigurationError(f"unknown species {species!r}")
    if not sp.is_payload:
        raise ConfigurationError(f"inflow target {species!r} is counter-only")
    inflow = Inflow(species, rate_source, max_rate, name, packet_factory)
    network.inflows.append(inflow)
    return inflow


class NetworkState:
    """Concentrations plus the packets held by payload species."""

    def __init__(self, network: ReactionNetwork, clock: float = 0.0):
        self.concentrations: Dict[str, int] = {s: 0 for s in network.species}
        self.queues: Dict[str, deque] = {s: deque() for s in network.payload_species}
        self.clock = clock

    def enqueue(self, species: str, packet) -> None:
        self.queues[species].append(packet)
        self.concentrations[species] += 1

    def check(self) -> None:
        for s, q in self.queues.items():
            if self.concentrations[s] != len(q):
                raise InternalError(
                    f"species {s!r}: concentration {self.concentrations[s]} != queue length {len(q)}")
        for s, c in self.concentrations.items():
            if c < 0:
                raise InternalError(f"species {s!r} has negative count {c}")

    def resident_packets(self) -> int:
        return sum(len(q) for q in self.queues.values())

    def copy(self) -> "NetworkState":
        other = NetworkState.__new__(NetworkState)
        other.concentrations = dict(self.concentrations)
        other.queues = {s: deque(q) for s, q in self.queues.items()}
        other.clock = self.clock
        return other
