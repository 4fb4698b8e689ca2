"""Fixed-length genomes and their blueprint text form.

Every module kind in the registry owns one chromosome slot. Optional
kinds carry a presence gene, then one gene per control, then one
connector gene per required service. The head (PubSub) has only its
connector; the tail (Ethernet) has no genes.

Connector genes pick among the present providers of the required
service, searching downward from the chromosome and wrapping around, so
gene 0 means "the next module below".

Text form, one chromosome per line::

    pubsub conn=0
    tcp present=0 ack=0 retransmission=1 timestamps=0 conn=0
    udp present=0 conn=0
    crc present=1 e0=48 conn=0
    ipv4 present=1 conn=0
    ethernet
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

from ..errors import ConfigurationError
from .spec import Control, Registry

CONNECTOR_MAX = 4
HEAD = "pubsub"
TAIL = "ethernet"


@dataclass(frozen=True)
class Slot:
    """Gene layout of one chromosome."""

    kind: str
    optional: bool
    controls: Tuple[Control, ...]
    connectors: Tuple[str, ...]

    @property
    def gene_names(self) -> List[str]:
        names = ["present"] if self.optional else []
        names.extend(c.name for c in self.controls)
        names.extend("conn" if i == 0 else f"conn{i}" for i in range(len(self.connectors)))
        return names

    @property
    def domains(self) -> List[Tuple[int, int]]:
        doms = [(0, 1)] if self.optional else []
        doms.extend((c.lo, c.hi) for c in self.controls)
        doms.extend((0, CONNECTOR_MAX) for _ in self.connectors)
        return doms


class GenomeLayout:
    """Chromosome slots in registry order."""

    def __init__(self, registry: Registry, head: str = HEAD, tail: str = TAIL):
        kinds = registry.kinds()
        if head not in kinds or tail not in kinds:
            raise ConfigurationError("registry must contain the head and tail kinds")
        self.registry = registry
        self.head = head
        self.tail = tail
        self.slots: List[Slot] = []
        for kind in [head] + [k for k in kinds if k not in (head, tail)] + [tail]:
            spec = registry[kind]
            if kind == tail:
                self.slots.append(Slot(kind, False, (), ()))
            elif kind == head:
                self.slots.append(Slot(kind, False, (), tuple(spec.requires)))
            else:
                self.slots.append(Slot(kind, True, tuple(spec.controls), tuple(spec.requires)))
        if len(self.slots) - 2 > 6:
            raise ConfigurationError("at most 6 module kinds besides head and tail")
        self.domains: List[Tuple[int, int]] = [d for s in self.slots for d in s.domains]

    def __len__(self) -> int:
        return len(self.domains)

    def slot(self, kind: str) -> Slot:
        for s in self.slots:
            if s.kind == kind:
                return s
        raise ConfigurationError(f"no chromosome slot for kind {kind!r}")

    def chromosome_bounds(self) -> List[Tuple[int, int]]:
        """Flat [start, end) gene ranges of each chromosome."""
        out, start = [], 0
        for s in self.slots:
            n = len(s.domains)
            out.append((start, start + n))
            start += n
        return out

    def clip(self, genes: Sequence[int]) -> List[int]:
        return [min(max(int(g), lo), hi) for g, (lo, hi) in zip(genes, self.domains)]


@dataclass(frozen=True)
class Chromosome:
    kind: str
    present: bool
    controls: Tuple[Tuple[str, int], ...]
    connectors: Tuple[int, ...]

    def control(self, name: str) -> int:
        return dict(self.controls)[name]


class StackBlueprint:
    """A decoded genome."""

    def __init__(self, layout: GenomeLayout, genes: Sequence[int]):
        genes = [int(g) for g in genes]
        if len(genes) != len(layout):
            raise ConfigurationError(f"genome has {len(genes)} genes, layout needs {len(layout)}")
        for g, (lo, hi) in zip(genes, layout.domains):
            if not lo <= g <= hi:
                raise ConfigurationError(f"gene value {g} outside [{lo}, {hi}]")
        self.layout = layout
        self.genes: Tuple[int, ...] = tuple(genes)
        chromosomes = []
        pos = 0
        for slot in layout.slots:
            present = True
            if slot.optional:
                present = bool(genes[pos])
                pos += 1
            controls = []
            for c in slot.controls:
                controls.append((c.name, genes[pos]))
                pos += 1
            conns = tuple(genes[pos:pos + len(slot.connectors)])
            pos += len(slot.connectors)
            chromosomes.append(Chromosome(slot.kind, present, tuple(controls), conns))
        self.chromosomes: Tuple[Chromosome, ...] = tuple(chromosomes)

    def __eq__(self, other):
        return isinstance(other, StackBlueprint) and self.genes == other.genes

    def __hash__(self):
        return hash(self.genes)

    def __repr__(self):
        return f"StackBlueprint({self.to_text(' | ')})"

    def chromosome(self, kind: str) -> Chromosome:
        for c in self.chromosomes:
            if c.kind == kind:
                return c
        raise KeyError(kind)

    def params(self, kind: str) -> Dict[str, object]:
        """Decoded control values of a chromosome."""
        slot = self.layout.slot(kind)
        chrom = self.chromosome(kind)
        return {c.name: c.decode(chrom.control(c.name)) for c in slot.controls}

    def to_text(self, sep: str = "\n") -> str:
        lines = []
        for slot, chrom in zip(self.layout.slots, self.chromosomes):
            parts = [slot.kind]
            if slot.optional:
                parts.append(f"present={int(chrom.present)}")
            parts.extend(f"{name}={value}" for name, value in chrom.controls)
            names = slot.gene_names[-len(slot.connectors):] if slot.connectors else []
            parts.extend(f"{name}={value}" for name, value in zip(names, chrom.connectors))
            lines.append(" ".join(parts))
        return sep.join(lines)

    @property
    def id(self) -> str:
        return hashlib.sha1(self.to_text("|").encode()).hexdigest()[:10]


def parse_blueprint(text: str, layout: GenomeLayout) -> StackBlueprint:
    """Inverse of :meth:`StackBlueprint.to_text`; lines may also be separated by '|'."""
    lines = [ln.strip() for chunk in text.splitlines() for ln in chunk.split("|")]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    by_kind: Dict[str, Dict[str, int]] = {}
    for ln in lines:
        kind, *fields = ln.split()
        if kind in by_kind:
            raise ConfigurationError(f"blueprint lists {kind!r} twice")
        values = {}
        for f in fields:
            name, sep, raw = f.partition("=")
            if not sep:
                raise ConfigurationError(f"blueprint field {f!r} is not name=value")
            try:
                values[name] = int(raw)
            except ValueError:
                raise ConfigurationError(f"blueprint field {f!r}: value must be an integer") from None
        by_kind[kind] = values
    genes = []
    for slot in layout.slots:
        if slot.kind not in by_kind:
            raise ConfigurationError(f"blueprint is missing the {slot.kind!r} chromosome")
        values = by_kind.pop(slot.kind)
        for name in slot.gene_names:
            if name not in values:
                raise ConfigurationError(f"blueprint {slot.kind!r} lacks gene {name!r}")
            genes.append(values.pop(name))
        if values:
            raise ConfigurationError(f"blueprint {slot.kind!r}: unknown genes {sorted(values)}")
    if by_kind:
        raise ConfigurationError(f"blueprint has unknown kinds {sorted(by_kind)}")
    return StackBlueprint(layout, genes)


def connector_candidates(kinds: Sequence[str], present: Sequence[bool], index: int, service: str,
                         registry: Registry) -> List[int]:
    """Chromosomes a connector of chromosome ``index`` may bind to.

    Present chromosomes providing ``service``, self excluded, in genome
    order starting just below ``index`` and wrapping around. Gene value 0
    therefore binds to the next present provider further down the stack.
    """
    n = len(kinds)
    order = [(index + d) % n for d in range(1, n)]
    return [j for j in order if present[j] and registry[kinds[j]].provides == service]


def blueprint_from_path(layout: GenomeLayout, path: Sequence[str],
                        params: Optional[Dict[str, Dict[str, object]]] = None) -> StackBlueprint:
    """Build the genome whose data path is exactly ``head -> path... -> tail``.

    ``params`` maps kind to decoded control values; controls not given
    take their lowest gene. Chromosomes off the path are absent.
    """
    params = params or {}
    order = [layout.head] + list(path) + [layout.tail]
    kinds = [s.kind for s in layout.slots]
    present = [k in order for k in kinds]
    genes: List[int] = []
    for i, slot in enumerate(layout.slots):
        if slot.optional:
            genes.append(int(present[i]))
        for c in slot.controls:
            value = params.get(slot.kind, {}).get(c.name)
            genes.append(c.lo if value is None else c.encode(value))
        for service in slot.connectors:
            gene = 0
            if present[i]:
                target = kinds.index(order[order.index(slot.kind) + 1])
                gene = connector_candidates(kinds, present, i, service, layout.registry).index(target)
                if gene > CONNECTOR_MAX:
                    raise ConfigurationError(f"path {list(path)} needs connector gene {gene}")
            genes.append(gene)
    return StackBlueprint(layout, genes)


def full_stack_genome(layout: GenomeLayout) -> List[int]:
    """Every module present, wired in genome order, controls at their lowest gene."""
    genes: List[int] = []
    for slot in layout.slots:
        if slot.optional:
            genes.append(1)
        genes.extend(c.lo for c in slot.controls)
        genes.extend(0 for _ in slot.connectors)
    return genes
