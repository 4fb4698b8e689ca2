"""Plain-text reaction grammar.

Example::

    [species]
    S  @payload
    E  @counter = e0
    ES @payload
    P  @emit            # producing P fires the 'transmit' tag

    [constants]
    k1 = 1
    k2 = 1
    e0 = 10

    [reactions]
    r1: S + E -k1-> ES
    r2: ES -k2-> E + P

    [inflows]
    v_src -> S

Comments start with ``#``. Reaction labels are optional; coefficients
are written as a leading integer (``2 A + B -k-> C``).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple

from ..errors import ConfigurationError
from .network import COUNTER, PAYLOAD, TRANSMIT, Reaction, ReactionNetwork, Species

_SECTIONS = ("species", "constants", "reactions", "inflows")
_NAME = r"[A-Za-z_][A-Za-z0-9_]*"
_REACTION = re.compile(rf"^(?:(?P<label>{_NAME})\s*:)?\s*(?P<lhs>.*?)\s*-(?P<k>{_NAME})->\s*(?P<rhs>.*)$")
_TERM = re.compile(rf"^(?:(?P<n>\d+)\s*)?(?P<s>{_NAME})$")


class GrammarError(ConfigurationError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass
class ReactionFile:
    network: ReactionNetwork
    initial: Dict[str, int] = field(default_factory=dict)
    constants: Dict[str, float] = field(default_factory=dict)
    inflows: Dict[str, str] = field(default_factory=dict)  # inflow name -> species

    def initial_state(self):
        return self.network.initial_state(self.initial)


def _number(text: str):
    try:
        v = float(text)
    except ValueError:
        return None
    return int(v) if v.is_integer() else v


def _side(text: str, lineno: int) -> List[Tuple[str, int]]:
    text = text.strip()
    if text in ("", "0", "∅"):
        return []
    terms = []
    for part in text.split("+"):
        m = _TERM.match(part.strip())
        if not m:
            raise GrammarError(f"cannot parse term {part.strip()!r}", lineno)
        terms.append((m.group("s"), int(m.group("n") or 1)))
    return terms


def parse_reactions(text: str, overrides: Dict[str, float] = None) -> ReactionFile:
    """Parse the reaction grammar. ``overrides`` replace constant values."""
    section = None
    species_lines = []
    reaction_lines = []
    inflow_lines = []
    constants: Dict[str, float] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if section not in _SECTIONS:
                raise GrammarError(f"unknown section [{section}]", lineno)
            continue
        if section is None:
            raise GrammarError("content before the first [section] header", lineno)
        if section == "species":
            species_lines.append((lineno, line))
        elif section == "constants":
            name, sep, value = line.partition("=")
            name = name.strip()
            if not sep or not re.fullmatch(_NAME, name):
                raise GrammarError(f"expected 'name = value', got {line!r}", lineno)
            v = _number(value.strip())
            if v is None:
                raise GrammarError(f"constant {name!r} is not a number", lineno)
            constants[name] = v
        elif section == "reactions":
            reaction_lines.append((lineno, line))
        else:
            inflow_lines.append((lineno, line))
    constants.update(overrides or {})

    def resolve(token: str, lineno: int):
        v = _number(token)
        if v is not None:
            return v
        if token not in constants:
            raise GrammarError(f"unbound constant {token!r}", lineno)
        return constants[token]

    network = ReactionNetwork()
    emitters: Dict[str, str] = {}
    initial: Dict[str, int] = {}
    for lineno, line in species_lines:
        m = re.fullmatch(rf"({_NAME})\s+@(payload|counter|emit)(?:\s+({_NAME}))?(?:\s*=\s*(\S+))?", line)
        if not m:
            raise GrammarError(f"cannot parse species declaration {line!r}", lineno)
        sid, kind, tag, init = m.groups()
        if kind == "emit":
            if init is not None:
                raise GrammarError(f"emit species {sid!r} cannot have an initial count", lineno)
            emitters[sid] = tag or TRANSMIT
            continue
        if tag is not None:
            raise GrammarError(f"unexpected token {tag!r}", lineno)
        try:
            network.add_species(Species(sid, PAYLOAD if kind == "payload" else COUNTER))
        except ConfigurationError as exc:
            raise GrammarError(str(exc), lineno) from None
        if init is not None:
            if kind == "payload":
                raise GrammarError(f"payload species {sid!r} cannot have an initial count", lineno)
            value = resolve(init, lineno)
            if int(value) != value or value < 0:
                raise GrammarError(f"initial count of {sid!r} must be a non-negative integer", lineno)
            initial[sid] = int(value)

    for index, (lineno, line) in enumerate(reaction_lines, start=1):
        m = _REACTION.match(line)
        if not m:
            raise GrammarError(f"cannot parse reaction {line!r}", lineno)
        label = m.group("label") or f"r{index}"
        k_name = m.group("k")
        k = resolve(k_name, lineno)
        reactants: Dict[str, int] = {}
        for s, n in _side(m.group("lhs"), lineno):
            if s in emitters:
                raise GrammarError(f"emit species {s!r} cannot be a reactant", lineno)
            reactants[s] = reactants.get(s, 0) + n
        products: Dict[str, int] = {}
        emit_tag = None
        for s, n in _side(m.group("rhs"), lineno):
            if s in emitters:
                if emit_tag is not None or n != 1:
                    raise GrammarError("a reaction may emit exactly one molecule", lineno)
                emit_tag = emitters[s]
                continue
            products[s] = products.get(s, 0) + n
        try:
            network.add_reaction(Reaction(label, reactants, products, k, emit_tag, k_name))
        except ConfigurationError as exc:
            raise GrammarError(str(exc), lineno) from None

    inflows: Dict[str, str] = {}
    for lineno, line in inflow_lines:
        m = re.fullmatch(rf"({_NAME})\s*->\s*({_NAME})", line)
        if not m:
            raise GrammarError(f"expected 'name -> species', got {line!r}", lineno)
        name, sid = m.groups()
        sp = network.species.get(sid)
        if sp is None:
            raise GrammarError(f"inflow into undeclared species {sid!r}", lineno)
        if not sp.is_payload:
            raise GrammarError(f"inflow target {sid!r} is counter-only", lineno)
        inflows[name] = sid
    return ReactionFile(network, initial, constants, inflows)


def load_reactions(path, overrides=None) -> ReactionFile:
    return parse_reactions(Path(path).read_text(), overrides)
