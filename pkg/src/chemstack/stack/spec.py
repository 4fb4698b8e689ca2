"""Module interface, control domains and the module registry."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from ..errors import ConfigurationError

INSTANCE = "instance"
KIND = "kind"
INTERFACE = "interface"


@dataclass(frozen=True)
class Control:
    """An evolvable integer gene and its mapping to a module parameter.

    ``values`` optionally lists the parameter value for every gene value
    ``lo..hi``; otherwise the gene value is used directly.
    """

    name: str
    lo: int
    hi: int
    values: Optional[Tuple[object, ...]] = None

    def __post_init__(self):
        if self.hi < self.lo:
            raise ConfigurationError(f"control {self.name!r}: empty domain [{self.lo}, {self.hi}]")
        if self.values is not None and len(self.values) != self.hi - self.lo + 1:
            raise ConfigurationError(f"control {self.name!r}: value table does not cover the domain")

    @property
    def size(self) -> int:
        """Domain width ``|A|`` used as the mutation scale (hi - lo)."""
        return self.hi - self.lo

    def contains(self, gene: int) -> bool:
        return self.lo <= gene <= self.hi

    def decode(self, gene: int):
        if not self.contains(gene):
            raise ConfigurationError(f"control {self.name!r}: gene {gene} outside [{self.lo}, {self.hi}]")
        if self.values is None:
            return gene
        return self.values[gene - self.lo]

    def encode(self, value) -> int:
        """Gene whose decoded value is closest to ``value``."""
        if self.values is None:
            gene = int(round(value))
            if not self.contains(gene):
                raise ConfigurationError(f"control {self.name!r}: {value} outside domain")
            return gene

        def distance(v):
            if v is None or value is None:
                return 0.0 if v is value else math.inf
            if isinstance(v, str) or isinstance(value, str):
                return 0.0 if v == value else math.inf
            if v > 0 and value > 0:
                return abs(math.log(v) - math.log(value))
            return abs(v - value)

        best = min(range(len(self.values)), key=lambda i: distance(self.values[i]))
        return self.lo + best

    def narrowed(self, lo: int, hi: int) -> "Control":
        if lo < self.lo or hi > self.hi:
            raise ConfigurationError(
                f"control {self.name!r}: [{lo}, {hi}] is not inside [{self.lo}, {self.hi}]")
        values = None if self.values is None else self.values[lo - self.lo: hi - self.lo + 1]
        return Control(self.name, lo, hi, values)


def integer_control(name: str, lo: int, hi: int) -> Control:
    return Control(name, lo, hi)


def choice_control(name: str, choices: Sequence[object]) -> Control:
    return Control(name, 0, len(choices) - 1, tuple(choices))


@dataclass(frozen=True)
class ModuleSpec:
    kind: str
    provides: Optional[str]
    requires: Tuple[str, ...] = ()
    controls: Tuple[Control, ...] = ()
    sensors: Tuple[str, ...] = ()
    header_bytes: int = 0
    scope: str = INSTANCE
    factory: Optional[Callable[..., "StackModule"]] = field(default=None, compare=False)

    def control(self, name: str) -> Control:
        for c in self.controls:
            if c.name == name:
                return c
        raise KeyError(name)


class Registry:
    """Static table of module kinds, in canonical genome order."""

    def __init__(self, specs: Sequence[ModuleSpec] = ()):
        self._specs: Dict[str, ModuleSpec] = {}
        for spec in specs:
            self.register(spec)

    def register(self, spec: ModuleSpec) -> None:
        if spec.kind in self._specs:
            raise ConfigurationError(f"module kind {spec.kind!r} registered twice")
        self._specs[spec.kind] = spec

    def __getitem__(self, kind: str) -> ModuleSpec:
        try:
            return self._specs[kind]
        except KeyError:
            raise ConfigurationError(f"unknown module kind {kind!r}") from None

    def __contains__(self, kind: str) -> bool:
        return kind in self._specs

    def kinds(self) -> List[str]:
        return list(self._specs)

    def replace(self, spec: ModuleSpec) -> "Registry":
        """Copy with one kind's spec swapped (e.g. narrowed control domains)."""
        specs = [spec if s.kind == spec.kind else s for s in self._specs.values()]
        return Registry(specs)


class StackModule:
    """Base class of stack modules.

    Data moves down through :meth:`send` and up through :meth:`receive`.
    ``node`` is bound by :meth:`attach` before any traffic flows and
    provides the clock, the event calendar and the random stream.
    """

    kind = "module"

    def __init__(self, spec: ModuleSpec, params: Optional[Dict[str, object]] = None):
        self.spec = spec
        self.params = dict(params or {})
        self.upper: Optional[StackModule] = None
        self.lower: Optional[StackModule] = None
        self.node = None

    def attach(self, node) -> None:
        self.node = node

    def send(self, packet) -> None:
        self.lower.send(packet)

    def receive(self, packet) -> None:
        if self.upper is not None:
            self.upper.receive(packet)

    def sensors(self) -> Dict[str, float]:
        return {}

    def save_state(self) -> Optional[dict]:
        return None

    def restore_state(self, blob: dict) -> None:
        pass

    def flush(self) -> None:
        """Hand any buffered packets downward before teardown."""

    def __repr__(self):
        return f"<{type(self).__name__} {self.params}>"
