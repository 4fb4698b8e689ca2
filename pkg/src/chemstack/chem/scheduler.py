"""Law-of-Mass-Action scheduling of discrete reaction firings.

Two realizations are provided. ``stochastic`` is Gillespie's direct
method; ``deterministic`` is an integrate-and-fire scheduler in which
every reaction accumulates progress at its current mass-action rate and
fires each time the progress reaches one. Rates are refreshed after
every firing and every external arrival in both modes.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

from ..errors import ConfigurationError, InternalError
from .network import Inflow, NetworkState, Reaction, ReactionNetwork

STOCHASTIC = "stochastic"
DETERMINISTIC = "deterministic"
MODES = (STOCHASTIC, DETERMINISTIC)

# Granularity used to look ahead when a deterministic inflow is switched off.
_PROBE_DT = 0.01


@dataclass
class FiredReaction:
    time: float
    reaction: str
    emit_tag: Optional[str] = None
    packet: object = None
    merged: tuple = ()


@dataclass
class Arrival:
    time: float
    species: str
    packet: object
    inflow: str


def loma_rate(reaction: Reaction, state: NetworkState) -> float:
    """Mass-action firing rate ``k * prod(c_s ** chi_s)``; 0 when some
    reactant has fewer than ``chi_s`` molecules, since it cannot fire."""
    rate = reaction.k
    conc = state.concentrations
    for s, chi in reaction.reactants.items():
        c = conc[s]
        if c < chi or c <= 0:
            return 0.0
        rate *= c ** chi
    return rate


def make_rng(seed_or_rng) -> random.Random:
    if isinstance(seed_or_rng, random.Random):
        return seed_or_rng
    return random.Random(seed_or_rng)


class _Compiled:
    __slots__ = ("reaction", "id", "k", "reactants", "counter_products",
                 "payload_reactants", "payload_product", "emit_tag")

    def __init__(self, reaction: Reaction, network: ReactionNetwork):
        self.reaction = reaction
        self.id = reaction.id
        self.k = reaction.k
        self.reactants = tuple(reaction.reactants.items())
        self.payload_reactants = tuple(
            (s, n) for s, n in reaction.reactants.items() if network.species[s].is_payload)
        self.counter_products = tuple(
            (s, n) for s, n in reaction.products.items() if not network.species[s].is_payload)
        payload_products = [s for s, n in reaction.products.items()
                            if n and network.species[s].is_payload]
        self.payload_product = payload_products[0] if payload_products else None
        self.emit_tag = reaction.emit_tag


class ReactionScheduler:
    """Schedules firings of one network bound to one state.

    The scheduler never advances time on its own: callers ``peek`` the
    next firing time, and either ``fire`` it or report an external change
    through ``inject``/``touch`` at an earlier time. This lets a reaction
    network live inside a larger event calendar.
    """

    def __init__(self, network: ReactionNetwork, state: NetworkState, rng=None,
                 mode: str = STOCHASTIC):
        if mode not in MODES:
            raise ConfigurationError(f"unknown scheduler mode {mode!r}")
        self.network = network
        self.state = state
        self.rng = make_rng(rng)
        self.mode = mode
        self._compiled = [_Compiled(r, network) for r in network.reactions]
        self._next: Optional[Tuple[float, int]] = None
        self._stale = True
        n = len(self._compiled)
        self._rates = [0.0] * n
        self._progress = [0.0] * n
        self._t_rates = state.clock
        self._refresh_rates()

    def _rate(self, cr: _Compiled) -> float:
        conc = self.state.concentrations
        rate = cr.k
        for s, chi in cr.reactants:
            c = conc[s]
            if c < chi or c <= 0:
                return 0.0
            rate *= c if chi == 1 else c ** chi
        return rate

    def _refresh_rates(self) -> None:
        rates = self._rates
        progress = self._progress
        for i, cr in enumerate(self._compiled):
            r = self._rate(cr)
            rates[i] = r
            if r == 0.0:
                progress[i] = 0.0
        self._stale = True

    def rates(self) -> List[float]:
        """Current propensities, in reaction declaration order."""
        return list(self._rates)

    def _advance_progress(self, t: float) -> None:
        dt = t - self._t_rates
        if dt > 0:
            progress = self._progress
            for i, r in enumerate(self._rates):
                if r:
                    progress[i] += r * dt
        self._t_rates = t

    def peek(self) -> Optional[Tuple[float, int]]:
        """(absolute time, reaction index) of the next firing, or None."""
        if not self._stale:
            return self._next
        self._stale = False
        rates = self._rates
        if self.mode == STOCHASTIC:
            a0 = math.fsum(rates)
            if a0 <= 0.0:
                self._next = None
                return None
            dt = self.rng.expovariate(a0)
            target = self.rng.random() * a0
            acc = 0.0
            idx = len(rates) - 1
            for i, r in enumerate(rates):
                acc += r
                if target < acc and r > 0.0:
                    idx = i
                    break
            while rates[idx] <= 0.0:
                idx -= 1
            self._next = (self.state.clock + dt, idx)
            return self._next
        best = None
        t0 = self._t_rates
        progress = self._progress
        for i, r in enumerate(rates):
            if r > 0.0:
                remaining = 1.0 - progress[i]
                t = t0 + (remaining / r if remaining > 0.0 else 0.0)
                if best is None or t < best[0]:
                    best = (t, i)
        self._next = best
        return best

    def touch(self, t: float) -> None:
        """Report an external state change at time ``t``."""
        if t < self.state.clock:
            raise InternalError(f"time went backwards: {t} < {self.state.clock}")
        if self.mode == DETERMINISTIC:
            self._advance_progress(t)
        self.state.clock = t
        self._refresh_rates()

    def inject(self, species: str, packet, t: float) -> None:
        """External arrival of one packet into a payload species."""
        if t < self.state.clock:
            raise InternalError(f"time went backwards: {t} < {self.state.clock}")
        if self.mode == DETERMINISTIC:
            self._advance_progress(t)
        self.state.clock = t
        self.state.enqueue(species, packet)
        self._refresh_rates()

    def advance_to(self, t: float) -> None:
        """Move the clock to ``t`` without firing (t must not pass the next firing)."""
        nxt = self.peek()
        if nxt is not None and nxt[0] < t and self.mode == DETERMINISTIC:
            raise InternalError("advance_to would skip a deterministic firing")
        if self.mode == DETERMINISTIC:
            self._advance_progress(t)
        else:
            self._stale = True
        self.state.clock = max(self.state.clock, t)

    def fire(self) -> FiredReaction:
        nxt = self.peek()
        if nxt is None:
            raise InternalError("fire() called on a quiescent network")
        t, idx = nxt
        cr = self._compiled[idx]
        if self.mode == DETERMINISTIC:
            self._advance_progress(t)
            p = self._progress[idx] - 1.0
            self._progress[idx] = p if p > 0.0 else 0.0
        self.state.clock = t
        event = self._apply(cr, t)
        self._refresh_rates()
        return event

    def _apply(self, cr: _Compiled, t: float) -> FiredReaction:
        state = self.state
        conc = state.concentrations
        queues = state.queues
        carried = []
        for s, chi in cr.payload_reactants:
            q = queues[s]
            if len(q) != conc[s]:
                raise InternalError(f"species {s!r}: concentration/queue mismatch")
            for _ in range(chi):
                carried.append(q.popleft())
        for s, chi in cr.reactants:
            conc[s] -= chi
            if conc[s] < 0:
                raise InternalError(f"species {s!r} driven negative by {cr.id!r}")
        for s, xi in cr.counter_products:
            conc[s] += xi
        packet = carried[0] if carried else None
        merged = tuple(carried[1:])
        if cr.payload_product is not None:
            queues[cr.payload_product].append(packet)
            conc[cr.payload_product] += 1
        return FiredReaction(t, cr.id, cr.emit_tag, packet, merged)


class _InflowProcess:
    def __init__(self, inflow: Inflow, rng: random.Random, mode: str, t0: float):
        self.inflow = inflow
        self.rng = rng
        self.mode = mode
        self.count = 0
        self.next_time = self._draw(t0)

    def _draw(self, t: float) -> float:
        inflow = self.inflow
        if self.mode == STOCHASTIC:
            bound = inflow.bound
            if bound <= 0:
                return math.inf
            while True:
                t += self.rng.expovariate(bound)
                rate = inflow.rate_at(t)
                if rate > bound * (1 + 1e-12):
                    raise ConfigurationError(
                        f"inflow {inflow.name!r}: rate {rate} exceeds max_rate {bound}")
                if self.rng.random() * bound < rate:
                    return t
                if not callable(inflow.rate):
                    return math.inf
        rate = inflow.rate_at(t)
        if not callable(inflow.rate):
            return t + 1.0 / rate if rate > 0 else math.inf
        # Time-varying deterministic source: probe ahead through idle spells.
        horizon = t + 1e6
        while rate <= 0:
            t += _PROBE_DT
            if t > horizon:
                return math.inf
            rate = inflow.rate_at(t)
        return t + 1.0 / rate

    def pop(self) -> Tuple[float, object]:
        t = self.next_time
        factory = self.inflow.packet_factory
        packet = factory(t, self.count) if factory else (self.inflow.name, self.count, t)
        self.count += 1
        self.next_time = self._draw(t)
        return t, packet


class ChemSimulation:
    """A reaction network plus its inflows, advanced in time order."""

    def __init__(self, network: ReactionNetwork, state: NetworkState, rng=None,
                 mode: str = STOCHASTIC):
        self.rng = make_rng(rng)
        self.scheduler = ReactionScheduler(network, state, self.rng, mode)
        self.network = network
        self.state = state
        self.inflows = [_InflowProcess(f, self.rng, mode, state.clock) for f in network.inflows]

    def run_until(self, t_end: float, check: bool = False) -> List[Union[FiredReaction, Arrival]]:
        if t_end < self.state.clock:
            raise ConfigurationError(f"t_end {t_end} is before the current clock {self.state.clock}")
        trace: List[Union[FiredReaction, Arrival]] = []
        sched = self.scheduler
        inflows = self.inflows
        while True:
            nxt = sched.peek()
            t_fire = nxt[0] if nxt is not None else math.inf
            src = None
            t_arr = math.inf
            for proc in inflows:
                if proc.next_time < t_arr:
                    t_arr, src = proc.next_time, proc
            if t_fire >= t_end and t_arr >= t_end:
                break
            if t_arr < t_fire:
                t, packet = src.pop()
                sched.inject(src.inflow.species, packet, t)
                trace.append(Arrival(t, src.inflow.species, packet, src.inflow.name))
            else:
                trace.append(sched.fire())
            if check:
                self.state.check()
        if self.state.clock < t_end:
            sched.advance_to(t_end)
        return trace


def step(network: ReactionNetwork, state: NetworkState, rng=None,
         mode: str = STOCHASTIC) -> Tuple[Optional[FiredReaction], Optional[float]]:
    """Fire one reaction. Returns ``(None, None)`` when every rate is zero."""
    state.check()
    sched = ReactionScheduler(network, state, rng, mode)
    t0 = state.clock
    if sched.peek() is None:
        return None, None
    event = sched.fire()
    return event, event.time - t0


def run_until(network: ReactionNetwork, state: NetworkState, t_end: float, rng=None,
              mode: str = STOCHASTIC) -> List[Union[FiredReaction, Arrival]]:
    """Advance ``state`` to ``t_end``, interleaving firings and inflow arrivals.

    Each call starts fresh arrival processes at ``state.clock``; use
    :class:`ChemSimulation` directly to continue one realization across
    several horizons.
    """
    return ChemSimulation(network, state, rng, mode).run_until(t_end)
