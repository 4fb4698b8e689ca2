"""Blueprint-driven stack composition and the persistent store."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from .blueprint import StackBlueprint, connector_candidates
from .spec import INSTANCE, INTERFACE, KIND, Registry, StackModule

DEFAULT_INTERFACE = "eth0"


@dataclass(frozen=True)
class InvalidBlueprint:
    """Composition failure. ``reason`` is one of ``unresolved``, ``cycle``,
    ``no-tail`` or ``unknown-kind``."""

    reason: str
    detail: str = ""

    def __bool__(self):
        return False


class PersistentStore:
    """State blobs keyed by module kind and scope, surviving recomposition.

    Scope ``instance`` keys on the chromosome position, ``kind`` on the
    kind alone and ``interface`` on the network interface the stack is
    bound to.
    """

    def __init__(self):
        self._blobs: Dict[Tuple, dict] = {}

    @staticmethod
    def key(kind: str, scope: str, position: int, interface: str) -> Tuple:
        if scope == INSTANCE:
            return (kind, INSTANCE, position)
        if scope == INTERFACE:
            return (kind, INTERFACE, interface)
        return (kind, KIND)

    def put(self, key: Tuple, blob: Optional[dict]) -> None:
        if blob is not None:
            self._blobs[key] = blob

    def get(self, key: Tuple) -> Optional[dict]:
        return self._blobs.get(key)

    def __contains__(self, key) -> bool:
        return key in self._blobs

    def __len__(self) -> int:
        return len(self._blobs)


def resolve_path(blueprint: StackBlueprint, registry: Registry):
    """Follow connector genes from the head. Returns the list of chromosome
    indices on the data path, or an :class:`InvalidBlueprint`."""
    layout = blueprint.layout
    chroms = blueprint.chromosomes
    for c in chroms:
        if c.kind not in registry:
            return InvalidBlueprint("unknown-kind", c.kind)
    kinds = [c.kind for c in chroms]
    present = [c.present for c in chroms]
    path = [0]
    seen = {0}
    while chroms[path[-1]].kind != layout.tail:
        i = path[-1]
        chrom = chroms[i]
        slot = layout.slots[i]
        if not slot.connectors:
            return InvalidBlueprint("no-tail", f"{chrom.kind} has no connector")
        # Only the first connector carries the data path; all kinds here require one service.
        service = slot.connectors[0]
        candidates = connector_candidates(kinds, present, i, service, registry)
        if not candidates:
            return InvalidBlueprint("unresolved", f"{chrom.kind} requires {service!r}")
        nxt = candidates[chrom.connectors[0] % len(candidates)]
        if nxt in seen:
            return InvalidBlueprint("cycle", f"{chrom.kind} -> {chroms[nxt].kind}")
        seen.add(nxt)
        path.append(nxt)
    return path


class RunningStack:
    """Modules wired top (head) to bottom (tail)."""

    def __init__(self, blueprint: StackBlueprint, modules: List[StackModule], positions: List[int],
                 interface: str = DEFAULT_INTERFACE):
        self.blueprint = blueprint
        self.modules = modules
        self.positions = positions
        self.interface = interface
        self.node = None
        for upper, lower in zip(modules, modules[1:]):
            upper.lower = lower
            lower.upper = upper

    @property
    def head(self) -> StackModule:
        return self.modules[0]

    @property
    def tail(self) -> StackModule:
        return self.modules[-1]

    @property
    def kinds(self) -> List[str]:
        return [m.spec.kind for m in self.modules]

    def module(self, kind: str) -> Optional[StackModule]:
        for m in self.modules:
            if m.spec.kind == kind:
                return m
        return None

    def attach(self, node) -> None:
        self.node = node
        for m in self.modules:
            m.attach(node)

    def send(self, packet) -> None:
        self.head.send(packet)

    def receive(self, frame) -> None:
        self.tail.receive(frame)

    def sensors(self) -> Dict[str, Dict[str, float]]:
        return {m.spec.kind: m.sensors() for m in self.modules if m.spec.sensors}

    def header_bytes(self) -> int:
        return sum(m.spec.header_bytes for m in self.modules)

    def __repr__(self):
        return "RunningStack(" + " / ".join(self.kinds) + ")"


def compose(blueprint: StackBlueprint, registry: Registry, store: Optional[PersistentStore] = None,
            interface: str = DEFAULT_INTERFACE):
    """Instantiate the modules on the blueprint's data path.

    Returns a :class:`RunningStack` or an :class:`InvalidBlueprint`.
    Chromosomes not reached from the head are ignored.
    """
    path = resolve_path(blueprint, registry)
    if isinstance(path, InvalidBlueprint):
        return path
    modules = []
    for pos in path:
        kind = blueprint.chromosomes[pos].kind
        spec = registry[kind]
        module = spec.factory(spec, blueprint.params(kind))
        if store is not None:
            blob = store.get(store.key(kind, spec.scope, pos, interface))
            if blob is not None:
                module.restore_state(blob)
        modules.append(module)
    return RunningStack(blueprint, modules, list(path), interface)


def persist_detach(stack: RunningStack, store: PersistentStore) -> None:
    """Flush buffered packets downward, save every module's state and
    unbind the stack from its node."""
    for m in stack.modules:
        m.flush()
    for m, pos in zip(stack.modules, stack.positions):
        store.put(store.key(m.spec.kind, m.spec.scope, pos, stack.interface), m.save_state())
    for m in stack.modules:
        m.node = None
    stack.node = None
