import math

import pytest
from hypothesis import given, settings, strategies as st

from chemstack.errors import ConfigurationError
from chemstack.protocols import default_registry
from chemstack.stack.blueprint import (GenomeLayout, StackBlueprint, blueprint_from_path,
                                       connector_candidates, full_stack_genome, parse_blueprint)
from chemstack.stack.composer import (InvalidBlueprint, PersistentStore, RunningStack, compose,
                                      persist_detach, resolve_path)
from chemstack.stack.spec import (ModuleSpec, Registry, StackModule, choice_control,
                                  integer_control)
from chemstack.stack.trial import observed_settle_time, run_trial, trial_settle
from chemstack.sim.scenario import load_scenario
from chemstack.sim.world import World

from helpers import calm, layout_of, stack_for


@pytest.fixture(scope="module")
def e1():
    return calm()


@pytest.fixture(scope="module")
def layout(e1):
    return layout_of(e1)


def genomes(layout):
    return st.tuples(*[st.integers(lo, hi) for lo, hi in layout.domains]).map(list)


# --- controls and registry ------------------------------------------------------------

def test_control_encode_decode():
    c = choice_control("k_F", (None, 0.05, 0.5, 5.0))
    assert c.decode(c.encode(0.5)) == 0.5
    assert c.decode(c.encode(0.4)) == 0.5
    assert c.decode(c.encode(None)) is None
    assert choice_control("ack", ("cumulative", "selective")).encode("selective") == 1
    with pytest.raises(ConfigurationError):
        integer_control("e0", 44, 52).decode(60)
    with pytest.raises(ConfigurationError):
        integer_control("e0", 5, 1)


def test_registry_rejects_duplicates_and_unknown_kinds():
    reg = Registry([ModuleSpec("a", "x")])
    with pytest.raises(ConfigurationError):
        reg.register(ModuleSpec("a", "x"))
    with pytest.raises(ConfigurationError):
        reg["b"]


# --- genome layout and blueprint text ---------------------------------------------------

def test_layout_of_e1(layout):
    assert [s.kind for s in layout.slots] == ["pubsub", "tcp", "udp", "crc", "ipv4", "ethernet"]
    assert len(layout) == 13
    assert layout.slot("ethernet").domains == []
    assert layout.slot("crc").gene_names == ["present", "e0", "conn"]


def test_blueprint_text_round_trip(e1, layout):
    bp = parse_blueprint(e1.optimum, layout)
    assert parse_blueprint(bp.to_text(), layout) == bp
    assert bp.params("crc")["e0"] == 48
    assert compose(bp, e1.registry()).kinds == ["pubsub", "crc", "ipv4", "ethernet"]


@settings(max_examples=60)
@given(data=st.data())
def test_text_round_trip_property(data):
    layout = layout_of(calm())
    bp = StackBlueprint(layout, data.draw(genomes(layout)))
    assert parse_blueprint(bp.to_text(" | "), layout) == bp
    assert parse_blueprint(bp.to_text(), layout).id == bp.id


@pytest.mark.parametrize("text, message", [
    ("pubsub conn=0", "missing"),
    ("pubsub conn=x", "integer"),
    ("pubsub conn", "name=value"),
    ("pubsub conn=0\npubsub conn=0", "twice"),
])
def test_parse_errors(layout, text, message):
    with pytest.raises(ConfigurationError, match=message):
        parse_blueprint(text, layout)


def test_parse_rejects_unknown_genes_and_kinds(e1, layout):
    with pytest.raises(ConfigurationError, match="unknown genes"):
        parse_blueprint(e1.optimum.replace("udp present=0", "udp present=0 mtu=3"), layout)
    with pytest.raises(ConfigurationError, match="unknown kinds"):
        parse_blueprint(e1.optimum + " | quic present=1", layout)


def test_gene_outside_domain_rejected(layout):
    genes = full_stack_genome(layout)
    genes[0] = 9
    with pytest.raises(ConfigurationError):
        StackBlueprint(layout, genes)
    with pytest.raises(ConfigurationError):
        StackBlueprint(layout, genes[:-1])


# --- connectors -------------------------------------------------------------------------

def test_connector_candidates_search_downward_then_wrap():
    reg = default_registry()
    kinds = ["pubsub", "tcp", "udp", "crc", "ipv4", "ethernet"]
    present = [True] * 6
    assert connector_candidates(kinds, present, 2, "datagram", reg) == [3, 4, 5, 1]
    present[3] = False
    assert connector_candidates(kinds, present, 0, "datagram", reg) == [1, 2, 4, 5]


def test_full_stack_is_every_module_in_order(e1, layout):
    stack = compose(StackBlueprint(layout, full_stack_genome(layout)), e1.registry())
    assert stack.kinds == ["pubsub", "tcp", "udp", "crc", "ipv4", "ethernet"]


@pytest.mark.parametrize("path", [[], ["ipv4"], ["crc", "ipv4"], ["udp", "crc", "ipv4"],
                                  ["tcp", "udp", "crc", "ipv4"], ["ipv4", "crc"],
                                  ["crc", "tcp", "ipv4"]])
def test_blueprint_from_path_composes_that_path(e1, layout, path):
    bp = blueprint_from_path(layout, path)
    assert compose(bp, e1.registry()).kinds == ["pubsub"] + path + ["ethernet"]


def test_cycle_is_invalid(e1, layout):
    bp = blueprint_from_path(layout, ["udp", "crc", "ipv4"])
    genes = list(bp.genes)
    start, _ = layout.chromosome_bounds()[3]  # crc: present, e0, conn
    cands = connector_candidates([s.kind for s in layout.slots],
                                 [c.present for c in bp.chromosomes], 3, "datagram", e1.registry())
    genes[start + 2] = cands.index(2)  # crc -> udp, which points back at crc
    result = compose(StackBlueprint(layout, genes), e1.registry())
    assert isinstance(result, InvalidBlueprint) and result.reason == "cycle"
    assert not result


def test_unresolved_requirement_with_custom_registry():
    class Plain(StackModule):
        pass

    def f(spec, params):
        return Plain(spec, params)
    reg = Registry([
        ModuleSpec("pubsub", "application", ("datagram",), factory=f),
        ModuleSpec("shim", "datagram", ("frames",), factory=f),
        ModuleSpec("ethernet", "datagram", factory=f),
    ])
    layout = GenomeLayout(reg)
    result = compose(blueprint_from_path(layout, []), reg)
    assert isinstance(result, RunningStack) and result.kinds == ["pubsub", "ethernet"]
    genes = [0, 1, 0]  # pubsub conn=0 binds shim, which needs an absent "frames" provider
    bad = compose(StackBlueprint(layout, genes), reg)
    assert isinstance(bad, InvalidBlueprint) and bad.reason == "unresolved"


def test_layout_needs_head_and_tail():
    with pytest.raises(ConfigurationError):
        GenomeLayout(Registry([ModuleSpec("pubsub", "application", ("datagram",))]))


@settings(max_examples=300)
@given(data=st.data())
def test_compose_is_total(data):
    sc = calm()
    layout = layout_of(sc)
    bp = StackBlueprint(layout, data.draw(genomes(layout)))
    result = compose(bp, sc.registry())
    if isinstance(result, InvalidBlueprint):
        assert result.reason in ("unresolved", "cycle", "no-tail", "unknown-kind")
        return
    kinds = result.kinds
    assert kinds[0] == "pubsub" and kinds[-1] == "ethernet"
    assert len(set(kinds)) == len(kinds)
    for upper, lower in zip(result.modules, result.modules[1:]):
        assert upper.lower is lower and lower.upper is upper
    assert resolve_path(bp, sc.registry()) == result.positions


# --- persistence ------------------------------------------------------------------------

def test_persist_detach_flushes_crc_and_keeps_counters(e1, layout):
    sc = e1.copy()
    sc.trial.duration = 20.0
    bp = blueprint_from_path(layout, ["crc", "ipv4"], {"crc": {"e0": 44}})
    stack = compose(bp, sc.registry())
    world = World(sc, (stack, compose(bp, sc.registry())), seed=9, duration=20.0)
    world.run()
    crc = stack.module("crc").crc
    held = crc.in_flight()
    assert held > 0
    frames_before = len(world.a.phy_log)
    drops_before = sum(world.link_ab.drops.values())
    enqueued = crc.enqueued

    store = PersistentStore()
    persist_detach(stack, store)
    assert crc.in_flight() == 0 and crc.flushed == held
    # every flushed packet reaches the wire; the link buffer overflows on the burst
    assert len(world.a.phy_log) - frames_before == held
    assert sum(world.link_ab.drops.values()) > drops_before
    assert stack.node is None and all(m.node is None for m in stack.modules)

    blob = store.get(("crc", "kind"))
    assert blob["enqueued"] == enqueued and blob["flushed"] == held
    again = compose(bp, sc.registry(), store)
    again.attach(world.a)
    restored = again.module("crc").crc
    assert (restored.enqueued, restored.flushed, restored.transmitted) == (
        enqueued, held, crc.transmitted)
    assert restored.count("E") == 44


def test_store_scopes():
    assert PersistentStore.key("ipv4", "instance", 4, "eth0") == ("ipv4", "instance", 4)
    assert PersistentStore.key("udp", "interface", 2, "eth1") == ("udp", "interface", "eth1")
    assert PersistentStore.key("crc", "kind", 3, "eth0") == ("crc", "kind")


# --- trials -----------------------------------------------------------------------------

def test_trial_is_deterministic(e1):
    a = run_trial(stack_for(e1, ["crc", "ipv4"], {"crc": {"e0": 48}}), e1, seed=11)
    b = run_trial(stack_for(e1, ["crc", "ipv4"], {"crc": {"e0": 48}}), e1, seed=11)
    assert a.phy_rate == b.phy_rate and a.fitness == b.fitness


def test_trial_series_has_one_bin_per_second(e1):
    rec = run_trial(stack_for(e1, ["ipv4"]), e1, duration=30.5, seed=1)
    assert len(rec.phy_rate) == len(rec.app_rate) == math.ceil(30.5)
    assert not rec.extended


def test_trial_extends_short_duration(e1):
    stack = stack_for(e1, ["crc", "ipv4"], {"crc": {"e0": 48}})
    settle = trial_settle(stack, e1)
    rec = run_trial(stack, e1, duration=1.0, seed=1)
    assert rec.extended
    assert rec.duration == pytest.approx(settle + e1.trial.min_measure)
    assert rec.measure_seconds == pytest.approx(e1.trial.min_measure)


def test_settle_window_uses_crc_estimate(e1):
    assert trial_settle(stack_for(e1, ["ipv4"]), e1) == e1.trial.min_settle
    assert trial_settle(stack_for(e1, ["crc", "ipv4"], {"crc": {"e0": 48}}), e1) >= e1.trial.min_settle


def test_optimal_stack_without_cross_traffic_is_near_perfect(e1):
    rec = run_trial(stack_for(e1, ["crc", "ipv4"], {"crc": {"e0": 48}}), e1, seed=0)
    assert rec.fitness >= 0.95
    assert rec.delivery_ratio == 1.0 and rec.overhead_factor == 1.0


def test_unshaped_stack_scores_low(e1):
    rec = run_trial(stack_for(e1, ["ipv4"]), e1, seed=0)
    assert rec.fitness < 0.2
    assert rec.cov > 0.5


def test_world_conservation(e1):
    sc = load_scenario("E1")
    for path in (["ipv4"], ["crc", "ipv4"], ["udp", "crc", "ipv4"]):
        rec = run_trial(stack_for(sc, path, {"crc": {"e0": 44}}), sc, seed=3, keep_world=True)
        rec.world.check_conservation()


def test_observed_settle_time():
    assert observed_settle_time([10.0] * 20) == 3.0
    assert observed_settle_time([0.0] * 5 + [10.0] * 20) == 8.0
    with pytest.raises(ConfigurationError):
        observed_settle_time([1.0] * 5)
