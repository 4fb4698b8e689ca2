import functools
import random
import statistics

import pytest
from hypothesis import given, settings, strategies as st

from chemstack.chem.grammar import GrammarError, parse_reactions
from chemstack.chem.network import (COUNTER, PAYLOAD, Reaction, ReactionNetwork, Species,
                                    attach_inflow)
from chemstack.chem.scheduler import (DETERMINISTIC, STOCHASTIC, Arrival, ChemSimulation,
                                      FiredReaction, ReactionScheduler, loma_rate, run_until, step)
from chemstack.crc import crc_network
from chemstack.errors import ConfigurationError, InternalError


def crc_state(c_S=0, c_E=10, k1=1.0, k2=1.0):
    net, _ = crc_network(c_E, k1, k2)
    state = net.initial_state({"E": c_E})
    for i in range(c_S):
        state.enqueue("S", i)
    return net, state


# --- types ----------------------------------------------------------------------

def test_species_kind_is_validated():
    with pytest.raises(ConfigurationError):
        Species("X", "liquid")


@pytest.mark.parametrize("kwargs", [
    dict(reactants={}, products={"A": 1}, k=1.0),
    dict(reactants={"A": 1}, products={}, k=0.0),
    dict(reactants={"A": -1}, products={}, k=1.0),
    dict(reactants={"A": 1.5}, products={}, k=1.0),
])
def test_reaction_rejects_bad_definitions(kwargs):
    with pytest.raises(ConfigurationError):
        Reaction("r", **kwargs)


def test_network_rejects_undeclared_species():
    net = ReactionNetwork([Species("A", PAYLOAD)])
    with pytest.raises(ConfigurationError):
        net.add_reaction(Reaction("r", {"A": 1}, {"B": 1}, 1.0))


def test_network_rejects_payload_leak():
    # consumes a payload species without producing one or transmitting
    net = ReactionNetwork([Species("A", PAYLOAD), Species("T", COUNTER)])
    with pytest.raises(ConfigurationError):
        net.add_reaction(Reaction("r", {"A": 1}, {"T": 1}, 1.0))


def test_inflow_on_counter_species_is_rejected():
    net, _ = crc_network(5)
    with pytest.raises(ConfigurationError):
        attach_inflow(net, "E", 1.0)


# --- loma_rate ---------------------------------------------------------------------

def test_loma_rate_binary():
    net, state = crc_state(c_S=10, c_E=5)
    assert loma_rate(net.reaction("r1"), state) == pytest.approx(50.0)


def test_loma_rate_unary():
    net = ReactionNetwork([Species("ES", PAYLOAD), Species("E", COUNTER)])
    r2 = net.add_reaction(Reaction("r2", {"ES": 1}, {"E": 1}, 2.0, "transmit"))
    state = net.initial_state()
    for i in range(7):
        state.enqueue("ES", i)
    assert loma_rate(r2, state) == pytest.approx(14.0)


def test_loma_rate_zero_reactant():
    net, state = crc_state(c_S=0, c_E=5)
    assert loma_rate(net.reaction("r1"), state) == 0.0


@given(st.integers(0, 30), st.integers(0, 30), st.floats(0.01, 50))
def test_loma_rate_is_mass_action_product(c_A, c_B, k):
    net = ReactionNetwork([Species("A", COUNTER), Species("B", COUNTER)])
    r = net.add_reaction(Reaction("r", {"A": 2, "B": 1}, {"B": 1}, k))
    state = net.initial_state({"A": c_A, "B": c_B})
    expected = k * c_A ** 2 * c_B if c_A >= 2 and c_B >= 1 else 0.0
    assert loma_rate(r, state) == pytest.approx(expected)


# --- step ---------------------------------------------------------------------------

def test_step_quiescent():
    net, state = crc_state(c_S=0, c_E=0)
    assert step(net, state, 1) == (None, None)


def test_step_single_eligible_reaction_moves_packet():
    net, state = crc_state(c_S=1, c_E=1)
    event, dt = step(net, state, 7)
    assert event.reaction == "r1" and dt > 0
    assert state.concentrations == {"S": 0, "ES": 1, "E": 0}
    assert list(state.queues["ES"]) == [0]


def test_step_mean_waiting_time_matches_total_rate():
    # r2 alone with c_ES held at 10 (each firing re-injected), k2=1: mean dt 0.1 s
    net = ReactionNetwork([Species("ES", PAYLOAD), Species("E", COUNTER)])
    net.add_reaction(Reaction("r2", {"ES": 1}, {"E": 1}, 1.0, "transmit"))
    state = net.initial_state()
    for i in range(10):
        state.enqueue("ES", i)
    sched = ReactionScheduler(net, state, random.Random(11))
    n, t0 = 100_000, state.clock
    for i in range(n):
        ev = sched.fire()
        sched.inject("ES", i, ev.time)
    assert (state.clock - t0) / n == pytest.approx(0.1, rel=0.01)


def test_step_inconsistent_state_is_fatal():
    net, state = crc_state(c_S=2, c_E=1)
    state.concentrations["S"] = 5
    with pytest.raises(InternalError):
        step(net, state, 1)


def test_reaction_choice_frequencies_follow_propensities():
    # two competing unary reactions on a clamped queue: chi-square at 5 %
    net = ReactionNetwork([Species("A", PAYLOAD)])
    net.add_reaction(Reaction("fast", {"A": 1}, {}, 3.0, "transmit"))
    net.add_reaction(Reaction("slow", {"A": 1}, {}, 1.0, "transmit"))
    state = net.initial_state()
    for i in range(4):
        state.enqueue("A", i)
    sched = ReactionScheduler(net, state, random.Random(5))
    counts = {"fast": 0, "slow": 0}
    for i in range(20_000):
        ev = sched.fire()
        counts[ev.reaction] += 1
        sched.inject("A", i, ev.time)
    n = sum(counts.values())
    chi2 = (counts["fast"] - 0.75 * n) ** 2 / (0.75 * n) + (counts["slow"] - 0.25 * n) ** 2 / (0.25 * n)
    assert chi2 < 3.841


# --- inflows and run_until ---------------------------------------------------------------

def _count_arrivals(mode, seed, rate=100.0, t=10.0):
    net, init = crc_network(10)
    attach_inflow(net, "S", rate)
    trace = run_until(net, net.initial_state(init), t, seed, mode)
    return sum(isinstance(e, Arrival) for e in trace)


def test_constant_inflow_deterministic_count():
    assert _count_arrivals(DETERMINISTIC, 0) in (999, 1000)


def test_constant_inflow_poisson_count():
    counts = [_count_arrivals(STOCHASTIC, s) for s in range(5)]
    for c in counts:
        assert abs(c - 1000) <= 3 * 1000 ** 0.5


def test_zero_inflow_quiesces():
    net, init = crc_network(3)
    attach_inflow(net, "S", 0.0)
    state = net.initial_state(init)
    assert run_until(net, state, 5.0, 1) == []


def test_on_off_inflow_only_in_on_phases():
    net, init = crc_network(10)
    attach_inflow(net, "S", lambda t: 200.0 if int(t) % 2 == 0 else 0.0, max_rate=200.0)
    trace = run_until(net, net.initial_state(init), 6.0, 3)
    arrivals = [e.time for e in trace if isinstance(e, Arrival)]
    assert arrivals and all(int(t) % 2 == 0 for t in arrivals)


def test_run_until_current_clock_is_empty():
    net, init = crc_network(10)
    attach_inflow(net, "S", 10.0)
    state = net.initial_state(init)
    assert run_until(net, state, 0.0, 1) == []


def test_run_until_rejects_past_horizon():
    net, init = crc_network(10)
    sim = ChemSimulation(net, net.initial_state(init), 1)
    sim.run_until(2.0)
    with pytest.raises(ConfigurationError):
        sim.run_until(1.0)


def test_overload_transmit_rate_is_capped():
    net, init = crc_network(20)
    attach_inflow(net, "S", 200.0)
    trace = run_until(net, net.initial_state(init), 100.0, 4)
    tx = sum(1 for e in trace if isinstance(e, FiredReaction) and e.emit_tag == "transmit")
    assert tx / 100.0 == pytest.approx(20.0, rel=0.05)


@pytest.mark.parametrize("mode", [STOCHASTIC, DETERMINISTIC])
def test_same_seed_same_trace(mode):
    def trace():
        net, init = crc_network(8, k_F=0.5)
        attach_inflow(net, "S", 12.0)
        return [(type(e).__name__, e.time) for e in run_until(net, net.initial_state(init), 20.0, 42, mode)]
    assert trace() == trace()


@given(seed=st.integers(0, 2 ** 32 - 1), e0=st.integers(1, 30), v=st.floats(0.5, 80),
       k_F=st.sampled_from([0.0, 0.5, 5.0]), mode=st.sampled_from([STOCHASTIC, DETERMINISTIC]))
def test_trace_invariants(seed, e0, v, k_F, mode):
    """Time order, packet conservation at every event, FIFO departures."""
    net, init = crc_network(e0, k_F=k_F)
    attach_inflow(net, "S", v)
    state = net.initial_state(init)
    sim = ChemSimulation(net, state, seed, mode)
    injected = emitted = 0
    last_t = 0.0
    departures = []
    for ev in sim.run_until(5.0, check=True):
        assert ev.time >= last_t
        last_t = ev.time
        if isinstance(ev, Arrival):
            injected += 1
        elif ev.emit_tag == "transmit":
            emitted += 1
            departures.append(ev.packet[1])
    assert injected == state.resident_packets() + emitted
    assert departures == sorted(departures)


@functools.lru_cache(maxsize=None)
def _transmit_times(e0, k2, horizon, seed, mode=STOCHASTIC):
    net, init = crc_network(e0, 1.0, k2)
    attach_inflow(net, "S", 20 * e0 * k2)
    trace = run_until(net, net.initial_state(init), horizon, seed, mode)
    return tuple(e.time for e in trace if isinstance(e, FiredReaction) and e.emit_tag == "transmit")


@given(e0=st.integers(1, 20), k2=st.sampled_from([0.5, 1.0, 2.5]), start=st.floats(0, 50), width=st.floats(0.1, 50))
def test_deterministic_emission_bounded_in_every_window(e0, k2, start, width):
    # one token cycle can put at most e0 departures ahead of the fluid limit
    times = _transmit_times(e0, k2, 100.0, 0, DETERMINISTIC)
    n = sum(1 for t in times if start <= t < start + width)
    assert n <= e0 * k2 * width + e0


@settings(max_examples=10)
@given(seed=st.integers(0, 2 ** 32 - 1), e0=st.integers(1, 20), k2=st.floats(0.5, 5))
def test_stochastic_emission_respects_cap(seed, e0, k2):
    horizon = 1e4 / (e0 * k2)
    assert len(_transmit_times(e0, k2, horizon, seed)) / horizon <= 1.1 * e0 * k2


def test_stochastic_emission_converges_to_cap():
    e0, k2 = 10, 1.0
    horizon = 1e4 / (e0 * k2)
    rates = [len(_transmit_times(e0, k2, horizon, seed)) / horizon for seed in range(10)]
    assert statistics.fmean(rates) <= 1.01 * e0 * k2


# --- grammar ---------------------------------------------------------------------------

CRC_TEXT = """
[species]
S  @payload
E  @counter = e0
ES @payload
P  @emit
[constants]
k1 = 1
k2 = 2
e0 = 10
[reactions]
r1: S + E -k1-> ES
r2: ES -k2-> E + P
[inflows]
v_src -> S
"""


def test_grammar_builds_crc():
    rf = parse_reactions(CRC_TEXT)
    assert rf.initial == {"E": 10}
    assert rf.inflows == {"v_src": "S"}
    r2 = rf.network.reaction("r2")
    assert r2.k == 2.0 and r2.emit_tag == "transmit" and r2.products == {"E": 1}


def test_grammar_overrides_constants():
    rf = parse_reactions(CRC_TEXT, {"e0": 4, "k2": 3})
    assert rf.initial == {"E": 4}
    assert rf.network.reaction("r2").k == 3.0


@pytest.mark.parametrize("text, line", [
    ("S @payload", 1),
    ("[species]\nS @gas", 2),
    ("[reactions]\nS -kx-> P", 2),
    ("[species]\nS @payload\n[reactions]\nS -k-> S", 4),
    ("[bogus]", 1),
])
def test_grammar_errors_carry_line(text, line):
    with pytest.raises(GrammarError) as exc:
        parse_reactions(text)
    assert exc.value.line == line
