"""Shared fixtures for building small worlds."""

from chemstack.sim.link import CrossTraffic
from chemstack.sim.scenario import load_scenario
from chemstack.stack.blueprint import GenomeLayout, blueprint_from_path
from chemstack.stack.composer import compose


def calm(name="E1", **link):
    """Built-in scenario with cross-traffic off and optional link overrides."""
    sc = load_scenario(name).copy()
    sc.link.cross_traffic = CrossTraffic(0.0)
    for key, value in link.items():
        setattr(sc.link, key, value)
    return sc


def stack_for(scenario, path, params=None):
    registry = scenario.registry()
    bp = blueprint_from_path(GenomeLayout(registry), path, params)
    return compose(bp, registry)


def layout_of(scenario):
    return GenomeLayout(scenario.registry())
