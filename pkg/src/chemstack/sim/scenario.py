"""Scenario files: YAML with a versioned schema.

Unknown keys are rejected with the offending line and field. Example::

    schema: 1
    name: E1
    flows: 1
    link: {bandwidth: 1.0e6, delay: 0.01, cross_traffic: {mean_rate: 0}}
    source: {mean_rate: 1.0e5, on: 0.5, off: 0.5}
    crc: {e0: [32, 64], k_F: 5, mode: deterministic}
    trial: {duration: 15}
    fitness: {variant: rate-target, target: 5.0e4}
    evolution: {generations: 25}
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import yaml

from ..chem.scheduler import MODES
from ..crc import E0_DOMAIN, K_F_CHOICES, crc_spec
from ..errors import ConfigurationError, ScenarioError
from ..evolution import EvolutionConfig, FitnessSpec
from ..protocols import SourceProfile, default_registry
from .link import CrossTraffic

SCHEMA_VERSION = 1
BUILTIN = ("E1", "E2", "E3")


@dataclass
class LinkConfig:
    bandwidth: float = 1.0e6
    delay: float = 0.01
    loss: float = 0.0
    buffer: Optional[float] = 64_000.0
    cross_traffic: CrossTraffic = field(default_factory=CrossTraffic)


@dataclass
class TrialConfig:
    """Trial timing. Fitness is measured on ``[settle, duration - tail]``
    for delivery, and on ``[settle, duration]`` for rates."""

    duration: float = 15.0
    settle_tolerance: float = 0.05
    min_settle: float = 1.0
    min_measure: float = 5.0
    tail: float = 0.5


@dataclass
class CrcSettings:
    """CRC parameters. ``e0`` and ``k_F`` are genes when given as a
    domain (e0) or a list of choices (k_F), otherwise fixed."""

    k1: float = 1.0
    k2: float = 1.0
    mode: str = "stochastic"
    e0: Union[int, Tuple[int, int]] = E0_DOMAIN
    k_F: Union[None, float, Tuple[Optional[float], ...]] = K_F_CHOICES
    window: float = 1.0

    @property
    def evolvable(self) -> Tuple[str, ...]:
        out = []
        if isinstance(self.e0, tuple):
            out.append("e0")
        if isinstance(self.k_F, tuple):
            out.append("k_F")
        return tuple(out)

    def spec(self):
        fixed = {"k1": self.k1, "k2": self.k2, "mode": self.mode, "window": self.window}
        if not isinstance(self.e0, tuple):
            fixed["e0"] = self.e0
        if not isinstance(self.k_F, tuple):
            fixed["k_F"] = self.k_F
        e0_domain = self.e0 if isinstance(self.e0, tuple) else E0_DOMAIN
        choices = self.k_F if isinstance(self.k_F, tuple) else K_F_CHOICES
        return crc_spec(e0_domain, choices, fixed, self.evolvable)


@dataclass
class Scenario:
    name: str = "scenario"
    flows: int = 1
    link: LinkConfig = field(default_factory=LinkConfig)
    source: SourceProfile = field(default_factory=lambda: SourceProfile(1.0e5))
    crc: CrcSettings = field(default_factory=CrcSettings)
    trial: TrialConfig = field(default_factory=TrialConfig)
    fitness: FitnessSpec = field(default_factory=FitnessSpec)
    evolution: EvolutionConfig = field(default_factory=EvolutionConfig)
    optimum: Optional[str] = None  # hand-configured best blueprint text

    def registry(self):
        return default_registry(self.crc.spec())

    @property
    def target_rate(self) -> float:
        return self.fitness.target

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, evolution=replace(self.evolution, seed=int(seed)))

    def with_generations(self, generations: int) -> "Scenario":
        return replace(self, evolution=replace(self.evolution, generations=int(generations)))

    def copy(self) -> "Scenario":
        return copy.deepcopy(self)


# --- parsing -------------------------------------------------------------------

_SCALARS = yaml.SafeLoader("")


class _Node:
    """A YAML value with the line it came from."""

    __slots__ = ("value", "line")

    def __init__(self, value, line):
        self.value = value
        self.line = line


def _convert(node):
    line = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            # keys stay literal strings; YAML 1.1 would read on/off as booleans
            key = k.value if isinstance(k, yaml.ScalarNode) else _convert(k).value
            if key in out:
                raise ScenarioError("duplicate key", line=k.start_mark.line + 1, field=str(key))
            out[key] = _Node(_convert(v), k.start_mark.line + 1)
        return _Node(out, line)
    if isinstance(node, yaml.SequenceNode):
        return _Node([_convert(v) for v in node.value], line)
    return _Node(_SCALARS.construct_object(node), line)


def _plain(node):
    v = node.value
    if isinstance(v, dict):
        return {k: _plain(x.value) for k, x in v.items()}
    if isinstance(v, list):
        return [_plain(x) for x in v]
    return v


class _Section:
    def __init__(self, node: _Node, path: str):
        if not isinstance(node.value, dict):
            raise ScenarioError("expected a mapping", line=node.line, field=path)
        self.items: Dict[str, _Node] = node.value
        self.path = path
        self.line = node.line

    def _field(self, key):
        return f"{self.path}.{key}" if self.path else key

    def check_keys(self, allowed) -> None:
        for key, entry in self.items.items():
            if key not in allowed:
                raise ScenarioError(f"unknown key (allowed: {', '.join(sorted(allowed))})",
                                    line=entry.line, field=self._field(key))

    def has(self, key) -> bool:
        return key in self.items

    def number(self, key, default, *, integer=False, lo=None, hi=None, allow_none=False):
        if key not in self.items:
            return default
        entry = self.items[key]
        value = entry.value.value
        if value is None and allow_none:
            return None
        if isinstance(value, str):
            # YAML 1.1 reads exponents without a sign (1.0e6) as strings.
            try:
                value = float(value)
            except ValueError:
                pass
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        if integer:
            ok = ok and float(value).is_integer()
        if not ok:
            kind = "an integer" if integer else "a number"
            raise ScenarioError(f"expected {kind}, got {value!r}", line=entry.line, field=self._field(key))
        value = int(value) if integer else float(value)
        if (lo is not None and value < lo) or (hi is not None and value > hi):
            raise ScenarioError(f"value {value} outside [{lo}, {hi}]", line=entry.line,
                                field=self._field(key))
        return value

    def string(self, key, default, choices=None):
        if key not in self.items:
            return default
        entry = self.items[key]
        value = entry.value.value
        if not isinstance(value, str) or (choices and value not in choices):
            want = f"one of {list(choices)}" if choices else "a string"
            raise ScenarioError(f"expected {want}, got {value!r}", line=entry.line, field=self._field(key))
        return value

    def section(self, key) -> Optional["_Section"]:
        if key not in self.items:
            return None
        return _Section(self.items[key].value, self._field(key))

    def raw(self, key):
        return self.items[key]


def _guard(section: _Section, key: str, build):
    try:
        return build()
    except ScenarioError:
        raise
    except ConfigurationError as exc:
        raise ScenarioError(str(exc), line=section.line, field=section.path or key) from None


def _parse_link(sec: Optional[_Section]) -> LinkConfig:
    if sec is None:
        return LinkConfig()
    sec.check_keys({"bandwidth", "delay", "loss", "buffer", "cross_traffic"})
    cross = CrossTraffic()
    cs = sec.section("cross_traffic")
    if cs is not None:
        cs.check_keys({"mean_rate", "on", "off"})
        cross = _guard(cs, "cross_traffic", lambda: CrossTraffic(
            cs.number("mean_rate", 0.0, lo=0), cs.number("on", 0.2, lo=1e-9), cs.number("off", 0.8, lo=0)))
    return LinkConfig(
        bandwidth=sec.number("bandwidth", 1.0e6, lo=1e-9),
        delay=sec.number("delay", 0.01, lo=0),
        loss=sec.number("loss", 0.0, lo=0, hi=1),
        buffer=sec.number("buffer", 64_000.0, lo=1, allow_none=True),
        cross_traffic=cross)


def _parse_source(sec: Optional[_Section]) -> SourceProfile:
    if sec is None:
        return SourceProfile(1.0e5)
    sec.check_keys({"mean_rate", "on", "off", "phases", "payload", "file_size"})
    return _guard(sec, "source", lambda: SourceProfile(
        mean_rate=sec.number("mean_rate", 1.0e5, lo=0),
        on_duration=sec.number("on", 0.5, lo=1e-9),
        off_duration=sec.number("off", 0.5, lo=0),
        phases=sec.string("phases", "exponential", ("exponential", "fixed")),
        payload_len=sec.number("payload", 1000, integer=True, lo=1),
        file_size=sec.number("file_size", 400_000, integer=True, lo=1)))


def _parse_crc(sec: Optional[_Section]) -> CrcSettings:
    if sec is None:
        return CrcSettings()
    sec.check_keys({"k1", "k2", "mode", "e0", "k_F", "window"})
    e0 = E0_DOMAIN
    if sec.has("e0"):
        entry = sec.raw("e0")
        if isinstance(entry.value.value, list):
            vals = _plain(entry.value)
            if (len(vals) != 2 or not all(isinstance(v, int) and not isinstance(v, bool) for v in vals)
                    or not E0_DOMAIN[0] <= vals[0] <= vals[1] <= E0_DOMAIN[1]):
                raise ScenarioError(f"e0 domain must be [lo, hi] inside {list(E0_DOMAIN)}",
                                    line=entry.line, field="crc.e0")
            e0 = (vals[0], vals[1])
        else:
            e0 = sec.number("e0", 10, integer=True, lo=E0_DOMAIN[0], hi=E0_DOMAIN[1])
    k_F = K_F_CHOICES
    if sec.has("k_F"):
        entry = sec.raw("k_F")
        if isinstance(entry.value.value, list):
            vals = _plain(entry.value)
            if not vals or not all(v is None or (isinstance(v, (int, float)) and v > 0) for v in vals):
                raise ScenarioError("k_F choices must be positive numbers or null",
                                    line=entry.line, field="crc.k_F")
            k_F = tuple(None if v is None else float(v) for v in vals)
        else:
            k_F = sec.number("k_F", None, lo=0, allow_none=True)
    return CrcSettings(
        k1=sec.number("k1", 1.0, lo=1e-12), k2=sec.number("k2", 1.0, lo=1e-12),
        mode=sec.string("mode", "stochastic", MODES), e0=e0, k_F=k_F,
        window=sec.number("window", 1.0, lo=1e-9))


def _parse_trial(sec: Optional[_Section]) -> TrialConfig:
    if sec is None:
        return TrialConfig()
    sec.check_keys({"duration", "settle_tolerance", "min_settle", "min_measure", "tail"})
    return TrialConfig(
        duration=sec.number("duration", 15.0, lo=1e-9),
        settle_tolerance=sec.number("settle_tolerance", 0.05, lo=1e-12, hi=1),
        min_settle=sec.number("min_settle", 1.0, lo=0),
        min_measure=sec.number("min_measure", 5.0, lo=1e-9),
        tail=sec.number("tail", 0.5, lo=0))


def _parse_fitness(sec: Optional[_Section]) -> FitnessSpec:
    if sec is None:
        return FitnessSpec()
    sec.check_keys({"variant", "target", "sigma_fraction", "w_delivery", "w_overhead", "w_var",
                    "w_delay", "d_ref"})
    return _guard(sec, "fitness", lambda: FitnessSpec(
        variant=sec.string("variant", "rate-target", ("rate-target", "constancy-delay")),
        target=sec.number("target", 50_000.0, lo=1e-9),
        sigma_fraction=sec.number("sigma_fraction", 0.05, lo=1e-12),
        w_delivery=sec.number("w_delivery", 1.0, lo=0), w_overhead=sec.number("w_overhead", 1.0, lo=0),
        w_var=sec.number("w_var", 1.0, lo=0), w_delay=sec.number("w_delay", 1.0, lo=0),
        d_ref=sec.number("d_ref", 1.0, lo=1e-12)))


def _parse_evolution(sec: Optional[_Section]) -> EvolutionConfig:
    if sec is None:
        return EvolutionConfig()
    sec.check_keys({"population", "elite", "crossover_p", "mutation_p", "generations", "seed", "init"})
    return _guard(sec, "evolution", lambda: EvolutionConfig(
        population_size=sec.number("population", 3, integer=True, lo=1),
        elite_size=sec.number("elite", 1, integer=True, lo=0),
        crossover_p=sec.number("crossover_p", 0.1, lo=0, hi=1),
        mutation_p=sec.number("mutation_p", 0.9, lo=0, hi=1),
        generations=sec.number("generations", 25, integer=True, lo=1),
        seed=sec.number("seed", 0, integer=True),
        init=sec.string("init", "full-stack", ("full-stack", "random"))))


TOP_KEYS = {"schema", "name", "flows", "link", "source", "crc", "trial", "fitness", "evolution", "optimum"}


def parse_scenario(text: str) -> Scenario:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ScenarioError(f"invalid YAML: {getattr(exc, 'problem', exc)}",
                            line=None if mark is None else mark.line + 1) from None
    if root is None:
        raise ScenarioError("empty scenario")
    top = _Section(_convert(root), "")
    top.check_keys(TOP_KEYS)
    if not top.has("schema"):
        raise ScenarioError("missing schema version", line=1, field="schema")
    version = top.number("schema", None, integer=True)
    if version != SCHEMA_VERSION:
        raise ScenarioError(f"unsupported schema version {version} (expected {SCHEMA_VERSION})",
                            line=top.raw("schema").line, field="schema")
    scenario = Scenario(
        name=top.string("name", "scenario"),
        flows=top.number("flows", 1, integer=True, lo=1, hi=2),
        link=_parse_link(top.section("link")),
        source=_parse_source(top.section("source")),
        crc=_parse_crc(top.section("crc")),
        trial=_parse_trial(top.section("trial")),
        fitness=_parse_fitness(top.section("fitness")),
        evolution=_parse_evolution(top.section("evolution")),
        optimum=top.string("optimum", None))
    if scenario.fitness.variant == "rate-target" and scenario.fitness.target >= scenario.link.bandwidth:
        entry = top.section("fitness")
        raise ScenarioError("target rate must be below the link bandwidth",
                            line=entry.line if entry else None, field="fitness.target")
    return scenario


def load_scenario(path_or_name: Union[str, Path]) -> Scenario:
    """Load a scenario file, or a built-in scenario by name (E1, E2, E3)."""
    name = str(path_or_name)
    if name in BUILTIN:
        text = resources.files("chemstack.scenarios").joinpath(f"{name}.yaml").read_text()
        return parse_scenario(text)
    path = Path(name)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {name!r}: {exc.strerror}") from None
    return parse_scenario(text)
