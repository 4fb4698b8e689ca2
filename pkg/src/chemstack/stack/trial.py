"""Single trials of a composed stack and their measurements."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

from ..errors import ConfigurationError
from ..evolution import fitness as fitness_of
from ..flow import settle_time_estimate
from ..packet import DATA
from ..protocols import ETHERNET_BYTES, IPV4_BYTES
from .blueprint import GenomeLayout, StackBlueprint
from .composer import InvalidBlueprint, RunningStack, compose

# Reference efficiency: payload behind Ethernet and IPv4 only.
REFERENCE_HEADERS = ETHERNET_BYTES + IPV4_BYTES


@dataclass
class TrialRecord:
    blueprint_id: str
    blueprint_text: str
    duration: float
    settle: float
    extended: bool = False
    valid: bool = True
    reason: str = ""
    phy_rate: List[float] = field(default_factory=list)  # B/s, 1 s bins
    app_rate: List[float] = field(default_factory=list)
    sent: int = 0
    delivered: int = 0
    delivery_ratio: float = 0.0
    attribution_ratio: float = 0.0
    wire_bytes: float = 0.0
    payload_bytes: float = 0.0
    overhead_bytes: float = 0.0
    overhead_factor: float = 0.0
    mean_phy_rate: float = 0.0
    cov: float = math.inf
    mean_delay: float = 0.0
    measure_seconds: float = 0.0
    measured_bins: List[float] = field(default_factory=list)
    fitness: float = 0.0


def trial_settle(stack: RunningStack, scenario) -> float:
    """Settle window: the CRC's predicted settle time, at least ``min_settle``."""
    settle = scenario.trial.min_settle
    crc = stack.module("crc")
    if crc is not None:
        c = crc.config
        settle = max(settle, settle_time_estimate(c.e0, c.k1, c.k2, c.k_F,
                                                  scenario.trial.settle_tolerance))
    return settle


def observed_settle_time(bins: List[float], band: float = 0.2, window: int = 4) -> float:
    """Seconds until the ``window``-bin moving average of a 1 s rate series
    stays within ``band`` (relative) of the mean of its second half.

    The window should span whole source periods so on/off bursts cancel.
    """
    if window < 1 or len(bins) < 2 * window:
        raise ConfigurationError("series too short for the moving-average window")
    final = sum(bins[len(bins) // 2:]) / (len(bins) - len(bins) // 2)
    last_out = 0
    for end in range(window, len(bins) + 1):
        avg = sum(bins[end - window:end]) / window
        if abs(avg - final) > band * final:
            last_out = end - window + 1
    return float(last_out + window - 1)


def _invalid_record(blueprint: StackBlueprint, reason: InvalidBlueprint, duration: float) -> TrialRecord:
    n = max(1, math.ceil(duration - 1e-9))
    return TrialRecord(blueprint.id, blueprint.to_text(" | "), duration, 0.0, valid=False,
                       reason=f"{reason.reason}: {reason.detail}", phy_rate=[0.0] * n,
                       app_rate=[0.0] * n)


def measure(world, settle: float, duration: float, tail: float, payload_len: int) -> dict:
    """Post-settle measurements of a finished world."""
    sender = world.a
    span = duration - settle
    window_bytes = 0.0
    first_sent = {}
    for t, size, kind, flow, seq, _retx in sender.phy_log:
        if t >= settle:
            window_bytes += size
        if kind == DATA and (flow, seq) not in first_sent:
            first_sent[(flow, seq)] = t
    counted = {k for k, t in first_sent.items() if settle <= t <= duration - tail}
    delay_of = {}
    for t_rx, flow, seq, _nbytes, ok, created in world.sink.records:
        if ok:
            delay_of[(flow, seq)] = t_rx - created
    delays = [delay_of[k] for k in counted if k in delay_of]
    payload_in_window = sum(payload_len for k, t in first_sent.items() if t >= settle)
    lo, hi = math.ceil(settle - 1e-9), int(math.floor(duration + 1e-9))
    bins = sender.phy_bins[lo:hi]
    mean_bin = sum(bins) / len(bins) if bins else 0.0
    if bins and mean_bin > 0:
        var = sum((b - mean_bin) ** 2 for b in bins) / len(bins)
        cov = math.sqrt(var) / mean_bin
    else:
        cov = math.inf
    eff = payload_in_window / window_bytes if window_bytes else 0.0
    eff_ref = payload_len / (payload_len + REFERENCE_HEADERS)
    return {
        "sent": len(counted),
        "delivered": len(delays),
        "delivery_ratio": len(delays) / len(counted) if counted else 0.0,
        "wire_bytes": window_bytes,
        "payload_bytes": float(payload_in_window),
        "overhead_bytes": window_bytes - payload_in_window,
        "overhead_factor": min(1.0, eff / eff_ref),
        "mean_phy_rate": window_bytes / span if span > 0 else 0.0,
        "cov": cov,
        "mean_delay": sum(delays) / len(delays) if delays else 0.0,
        "measure_seconds": max(0.0, span),
        "measured_bins": list(bins),
    }


def run_trial(stack: RunningStack, scenario, duration: Optional[float] = None, seed: int = 0,
              registry=None, keep_world: bool = False) -> TrialRecord:
    """Run one trial of ``stack`` (the sender side; the receiver runs a
    fresh composition of the same blueprint).

    With ``keep_world`` the finished simulation is attached as
    ``record.world`` for inspection.
    """
    from ..sim.world import World

    registry = registry or scenario.registry()
    requested = scenario.trial.duration if duration is None else float(duration)
    settle = trial_settle(stack, scenario)
    needed = settle + scenario.trial.min_measure
    extended = requested < needed
    duration = max(requested, needed)
    peer = compose(stack.blueprint, registry)
    if isinstance(peer, InvalidBlueprint):
        raise ConfigurationError(f"receiver stack failed to compose: {peer.reason}")
    world = World(scenario, (stack, peer), seed, duration)
    world.run()
    m = measure(world, settle, duration, scenario.trial.tail, scenario.source.payload_len)
    record = TrialRecord(stack.blueprint.id, stack.blueprint.to_text(" | "), duration, settle,
                         extended=extended, phy_rate=list(world.a.phy_bins),
                         app_rate=list(world.app_bins),
                         attribution_ratio=world.sink.attribution_ratio, **m)
    record.fitness = fitness_of(record, scenario.fitness)
    if keep_world:
        record.world = world
    return record


def evaluate_genome(genes, layout: GenomeLayout, scenario, seed: int, registry=None):
    """Compose and trial a genome. Invalid blueprints score 0 without a trial."""
    registry = registry or layout.registry
    blueprint = StackBlueprint(layout, genes)
    stack = compose(blueprint, registry)
    if isinstance(stack, InvalidBlueprint):
        return 0.0, _invalid_record(blueprint, stack, scenario.trial.duration)
    record = run_trial(stack, scenario, seed=seed, registry=registry)
    return record.fitness, record
