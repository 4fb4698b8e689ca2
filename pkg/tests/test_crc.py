import random
import statistics

import pytest
from hypothesis import given, settings, strategies as st

from chemstack.chem.scheduler import DETERMINISTIC, STOCHASTIC, FiredReaction
from chemstack.crc import (CrcConfig, CrcModule, clamped_service_rate, crc_build,
                           crc_enqueue, crc_on_transmit, crc_sensors, crc_spec)
from chemstack.errors import ConfigurationError, InternalError
from chemstack.flow import derive_odes, michaelis_menten_rate, steady_state


def drive(crc, arrivals, t_end):
    """Feed (time, packet) arrivals into ``crc``; returns (time, packet) departures."""
    out = []
    arrivals = list(arrivals)
    i = 0
    while True:
        t_arr = arrivals[i][0] if i < len(arrivals) else float("inf")
        t_fire = crc.next_time()
        t_fire = float("inf") if t_fire is None else t_fire
        t = min(t_arr, t_fire)
        if t >= t_end:
            break
        if t_arr <= t_fire:
            crc.enqueue(arrivals[i][1], t_arr)
            i += 1
        else:
            packet = crc.fire()
            if packet is not None:
                out.append((t_fire, packet))
    return out


def poisson(rate, t_end, rng):
    t, n, out = 0.0, 0, []
    while True:
        t += rng.expovariate(rate)
        if t >= t_end:
            return out
        out.append((t, n))
        n += 1


def on_off(rate, t_end, period=1.0):
    """Evenly spaced arrivals at ``rate`` during even seconds, none in odd ones."""
    out, n, t = [], 0, 0.0
    while t < t_end:
        if int(t / period) % 2 == 0:
            out.append((t, n))
            n += 1
        t += 1.0 / rate
    return out


def binned(times, t0, t1):
    bins = [0] * int(t1 - t0)
    for t in times:
        if t0 <= t < t1:
            bins[int(t - t0)] += 1
    return bins


def cov(xs):
    m = statistics.fmean(xs)
    return statistics.pstdev(xs) / m


# --- build ------------------------------------------------------------------------

def test_build_plain_topology():
    crc = crc_build(CrcConfig(10))
    assert set(crc.network.species) == {"S", "E", "ES"}
    assert crc.count("E") == 10 and crc.count("S") == 0
    assert crc.network.reaction("r2").emit_tag == "transmit"


def test_build_with_filter_stage():
    crc = crc_build(CrcConfig(10, k_F=0.05))
    assert set(crc.network.species) == {"S", "E", "ES", "F"}
    assert crc.network.reaction("r3").emit_tag == "transmit"
    assert crc.network.reaction("r2").emit_tag is None
    model = derive_odes(crc.network, [("v_src", "S")])
    assert model.psi.shape == (4, 4)


@pytest.mark.parametrize("kwargs", [dict(e0=0), dict(e0=2.5), dict(e0=5, k1=0), dict(e0=5, k_F=-1),
                                    dict(e0=5, mode="quantum"), dict(e0=5, evolvable=("k9",))])
def test_config_rejects_bad_values(kwargs):
    with pytest.raises(ConfigurationError):
        CrcConfig(**kwargs)


def test_rate_cap():
    assert CrcConfig(48, k2=2.0).rate_cap == 96.0


# --- enqueue / transmit --------------------------------------------------------------

def test_enqueue_makes_binding_eligible():
    crc = crc_build(CrcConfig(7), rng=1)
    assert crc.next_time() is None
    crc_enqueue(crc, "p", 0.0)
    assert crc.scheduler.rates()[0] == pytest.approx(7.0)


def test_enqueue_burst_without_time_passing():
    crc = crc_build(CrcConfig(10), rng=1)
    for i in range(1000):
        crc.enqueue(i, 0.0)
    assert crc.count("S") == 1000 and crc.transmitted == 0


def test_sustained_overload_is_capped():
    crc = crc_build(CrcConfig(20), rng=3)
    out = drive(crc, poisson(40.0, 200.0, random.Random(3)), 200.0)
    assert len(out) / 200.0 == pytest.approx(20.0, rel=0.05)


def test_single_packet_emitted_once():
    crc = crc_build(CrcConfig(1), rng=1)
    out = drive(crc, [(0.0, "a")], 100.0)
    assert [p for _, p in out] == ["a"]


@given(seed=st.integers(0, 2 ** 32 - 1), k_F=st.sampled_from([0.0, 1.0]))
def test_single_token_serializes_fifo(seed, k_F):
    crc = crc_build(CrcConfig(1, k_F=k_F), rng=seed)
    out = drive(crc, [(0.0, "a"), (0.0, "b"), (0.0, "c")], 1000.0)
    assert [p for _, p in out] == ["a", "b", "c"]


def test_transmit_without_packet_is_fatal():
    crc = crc_build(CrcConfig(2))
    with pytest.raises(InternalError):
        crc_on_transmit(crc, FiredReaction(1.0, "r2", "transmit", None))


@given(seed=st.integers(0, 2 ** 32 - 1), e0=st.integers(1, 50), k_F=st.sampled_from([0.0, 0.5, 5.0]),
       mode=st.sampled_from([STOCHASTIC, DETERMINISTIC]), rate=st.floats(1, 200),
       resize=st.lists(st.tuples(st.floats(0, 10), st.integers(1, 60)), max_size=3))
def test_token_and_packet_conservation(seed, e0, k_F, mode, rate, resize):
    """Conservation after every event, including e0 changes mid-run."""
    crc = crc_build(CrcConfig(e0, k_F=k_F, mode=mode), rng=seed)
    arrivals = poisson(rate, 10.0, random.Random(seed))
    changes = sorted(resize)
    t = 0.0
    for t_change, new_e0 in changes + [(10.0, None)]:
        batch = [a for a in arrivals if t <= a[0] < t_change]
        drive(crc, batch, t_change)
        crc.check()
        conc = crc.state.concentrations
        assert conc["E"] + conc["ES"] >= crc.e0 or crc._token_debt
        if new_e0 is not None:
            crc.set_e0(new_e0)
            crc.check()
        t = t_change
    # once every bound token has come back, the pool equals the configured e0
    crc.run_until(crc.clock + 1e4)
    conc = crc.state.concentrations
    assert conc["E"] + conc["ES"] == crc.e0
    assert crc.enqueued == crc.transmitted + crc.in_flight() + crc.flushed


def test_set_e0_only_touches_free_tokens():
    # fast binding, slow release: all five tokens end up bound
    crc = crc_build(CrcConfig(5, k1=1e4, k2=1e-4, mode=DETERMINISTIC))
    for i in range(5):
        crc.enqueue(i, 0.0)
    while crc.count("S"):
        crc.fire()
    assert crc.count("ES") == 5
    crc.set_e0(2)
    assert crc.count("ES") == 5 and crc.count("E") == 0
    crc.run_until(1e7)
    assert crc.count("E") + crc.count("ES") == 2


def test_flush_returns_packets_and_tokens():
    crc = crc_build(CrcConfig(3, k_F=0.1), rng=4)
    drive(crc, [(0.01 * i, i) for i in range(20)], 2.0)
    held = crc.in_flight()
    packets = crc.flush()
    assert len(packets) == held and crc.in_flight() == 0
    assert crc.count("E") == 3
    crc.check()


# --- sensors ---------------------------------------------------------------------

def test_sensors_idle():
    assert crc_sensors(crc_build(CrcConfig(10))) == {
        "queue_len": 0.0, "in_rate": 0.0, "out_rate": 0.0, "mean_delay": 0.0}


def test_sensors_steady_underload_match_oracle():
    crc = crc_build(CrcConfig(10, window=50.0), rng=9)
    drive(crc, poisson(5.0, 300.0, random.Random(9)), 300.0)
    s = crc.sensors(300.0)
    assert s["out_rate"] == pytest.approx(5.0, rel=0.15)
    model = derive_odes(crc.network, [("v_src", "S")], initial={"E": 10})
    assert steady_state(model, {"v_src": 5.0})["S"] == pytest.approx(1.0)


def test_smaller_filter_rate_means_longer_delay():
    delays, rates = [], []
    for k_F in (5.0, 0.5):
        crc = crc_build(CrcConfig(20, k_F=k_F, window=100.0), rng=5)
        drive(crc, poisson(8.0, 400.0, random.Random(5)), 400.0)
        s = crc.sensors(400.0)
        delays.append(s["mean_delay"])
        rates.append(s["out_rate"])
    assert delays[1] > delays[0]
    assert rates[1] == pytest.approx(rates[0], rel=0.15)


# --- rate behaviour ------------------------------------------------------------------

@pytest.mark.parametrize("c_S", [1, 5, 25, 125])
def test_clamped_queue_follows_mm_law(c_S):
    rate = clamped_service_rate(CrcConfig(50), c_S, 200.0, rng=c_S)
    assert rate == pytest.approx(michaelis_menten_rate(c_S, 50, 1, 1), rel=0.05)


@settings(max_examples=10)
@given(seed=st.integers(0, 2 ** 32 - 1), e0=st.integers(5, 50), load=st.floats(0.1, 0.8))
def test_underload_passthrough(seed, e0, load):
    v = load * e0
    crc = crc_build(CrcConfig(e0), rng=seed)
    t_end = 4000.0 / v  # about 4000 packets: Poisson noise 1.6 %
    arrivals = poisson(v, t_end, random.Random(seed))
    out = drive(crc, arrivals, t_end + 100.0)
    assert len(out) / t_end == pytest.approx(len(arrivals) / t_end, rel=0.03)


def test_low_pass_reduces_and_orders_output_variation():
    arrivals = on_off(80.0, 300.0)
    cin = cov(binned([t for t, _ in arrivals], 100, 300))
    covs = []
    for k_F in (5.0, 0.5, 0.05):
        crc = crc_build(CrcConfig(100, k_F=k_F, mode=DETERMINISTIC))
        out = drive(crc, arrivals, 300.0)
        covs.append(cov(binned([t for t, _ in out], 100, 300)))
    assert all(c < cin for c in covs)
    assert covs[0] > covs[1] > covs[2]


# --- stack module ------------------------------------------------------------------

def test_spec_controls():
    spec = crc_spec()
    e0 = spec.control("e0")
    assert (e0.decode(e0.lo), e0.decode(e0.hi)) == (1, 10000)
    k_F = spec.control("k_F")
    values = [k_F.decode(g) for g in range(k_F.lo, k_F.hi + 1)]
    assert values[0] is None
    assert min(values[1:]) == 0.01 and max(values[1:]) == 10.0
    assert values[1:] == sorted(values[1:])


def test_module_params_reach_config():
    m = CrcModule(crc_spec(), {"e0": 7, "k_F": 0.5})
    assert (m.config.e0, m.config.k_F) == (7, 0.5)
