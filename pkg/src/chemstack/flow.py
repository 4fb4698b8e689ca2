"""Mean-field flow models of reaction networks.

A network with stoichiometric matrix ``Psi`` (species x reactions, entries
``products - reactants``) and mass-action rate vector ``v(c)`` evolves as
``dc/dt = Psi @ v(c)``. Inflows contribute extra columns with a constant
rate each.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import reduce
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .chem.network import Inflow, ReactionNetwork
from .errors import (ConfigurationError, IntegrationDiverged, NumericalFailure,
                     StabilityViolation)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RateTerm:
    """Symbolic rate ``constant * prod(c_s ** power)``."""

    constant: str
    value: Optional[float]
    factors: Tuple[Tuple[str, int], ...] = ()

    def __str__(self):
        parts = [self.constant]
        for s, p in self.factors:
            parts.append(f"c_{s}" if p == 1 else f"c_{s}^{p}")
        return "*".join(parts)

    def symbolic(self) -> Tuple[str, Tuple[Tuple[str, int], ...]]:
        return self.constant, tuple(sorted(self.factors))


@dataclass
class StoichiometricMatrix:
    matrix: np.ndarray
    species: List[str]
    columns: List[str]

    def entry(self, species: str, column: str) -> int:
        return int(self.matrix[self.species.index(species), self.columns.index(column)])

    def as_dict(self) -> Dict[str, Dict[str, int]]:
        return {s: {c: self.entry(s, c) for c in self.columns} for s in self.species}

    def __str__(self):
        width = max([len(c) for c in self.columns] + [3])
        swidth = max([len(s) for s in self.species] + [1])
        lines = [" " * swidth + " " + " ".join(c.rjust(width) for c in self.columns)]
        for i, s in enumerate(self.species):
            row = " ".join(str(int(v)).rjust(width) for v in self.matrix[i])
            lines.append(s.ljust(swidth) + " " + row)
        return "\n".join(lines)


@dataclass
class Unbounded:
    """No finite steady state: ``species`` accumulates without bound."""

    species: str
    inflow: float
    capacity: float
    emission: float


@dataclass
class Trajectory:
    times: np.ndarray
    values: np.ndarray  # shape (len(times), n_species)
    species: List[str]
    clamp_events: List[Tuple[float, str]] = field(default_factory=list)

    def __getitem__(self, species: str) -> np.ndarray:
        return self.values[:, self.species.index(species)]

    @property
    def final(self) -> Dict[str, float]:
        return dict(zip(self.species, self.values[-1].tolist()))


class FlowModel:
    """``dc/dt = Psi @ v(c)`` for one network plus its inflow columns."""

    def __init__(self, stoich: StoichiometricMatrix, rates: List[RateTerm],
                 inflows: List[str], payload: Sequence[str], emitters: Sequence[str],
                 initial: Optional[Mapping[str, float]] = None):
        self.stoich = stoich
        self.rates = rates
        self.inflows = list(inflows)
        self.payload = list(payload)
        self.emitters = list(emitters)  # reaction columns that emit packets
        self.initial = dict(initial or {})
        self.species = stoich.species
        n, m = len(self.species), len(rates)
        self._chi = np.zeros((m, n))
        self._k = np.zeros(m)
        self._is_inflow = np.zeros(m, dtype=bool)
        for j, term in enumerate(rates):
            if term.constant in self.inflows and not term.factors:
                self._is_inflow[j] = True
            self._k[j] = term.value if term.value is not None else 0.0
            for s, p in term.factors:
                self._chi[j, self.species.index(s)] = p
        self._psi = stoich.matrix.astype(float)

    @property
    def psi(self) -> np.ndarray:
        return self.stoich.matrix

    def _constants(self, inflow_values: Optional[Mapping[str, float]]) -> np.ndarray:
        k = self._k.copy()
        values = dict(inflow_values or {})
        for j, term in enumerate(self.rates):
            if self._is_inflow[j]:
                if term.constant in values:
                    k[j] = float(values[term.constant])
                elif term.value is None:
                    raise ConfigurationError(f"no value for inflow {term.constant!r}")
        unknown = set(values) - set(self.inflows)
        if unknown:
            raise ConfigurationError(f"unknown inflow(s) {sorted(unknown)}")
        return k

    def rate_vector(self, c, inflow_values=None, k=None) -> np.ndarray:
        if k is None:
            k = self._constants(inflow_values)
        c = np.asarray(c, dtype=float)
        return k * np.prod(np.power(c[None, :], self._chi), axis=1)

    def rhs(self, c, inflow_values=None, k=None) -> np.ndarray:
        return self._psi @ self.rate_vector(c, inflow_values, k)

    def rate_jacobian(self, c, k) -> np.ndarray:
        """d v_r / d c_s for mass-action terms."""
        c = np.asarray(c, dtype=float)
        m, n = self._chi.shape
        jac = np.zeros((m, n))
        for j in range(m):
            for s in np.nonzero(self._chi[j])[0]:
                powers = self._chi[j].copy()
                coeff = powers[s]
                powers[s] -= 1
                jac[j, s] = k[j] * coeff * np.prod(np.power(c, powers))
        return jac

    def jacobian(self, c, inflow_values=None) -> np.ndarray:
        k = self._constants(inflow_values)
        return self._psi @ self.rate_jacobian(c, k)

    def emission_rate(self, c, inflow_values=None) -> float:
        v = self.rate_vector(c, inflow_values)
        return float(sum(v[self.stoich.columns.index(r)] for r in self.emitters))

    def equations(self) -> List[str]:
        """Human-readable ODE right-hand sides, one per species."""
        lines = []
        for i, s in enumerate(self.species):
            terms = []
            for j, coeff in enumerate(self.stoich.matrix[i]):
                coeff = int(coeff)
                if coeff == 0:
                    continue
                sign = "-" if coeff < 0 else "+"
                mag = "" if abs(coeff) == 1 else f"{abs(coeff)}*"
                terms.append(f"{sign} {mag}{self.rates[j]}")
            body = " ".join(terms) if terms else "0"
            if body.startswith("+ "):
                body = body[2:]
            lines.append(f"d c_{s}/dt = {body}")
        return lines

    def conserved_sums(self) -> List[Dict[str, int]]:
        """Non-negative left null-space vectors of Psi (conserved totals)."""
        laws = []
        for vec in left_nullspace(self.stoich.matrix):
            if all(v >= 0 for v in vec):
                laws.append({s: v for s, v in zip(self.species, vec) if v})
        return laws

    def conservation_matrix(self) -> np.ndarray:
        basis = left_nullspace(self.stoich.matrix)
        if not basis:
            return np.zeros((0, len(self.species)))
        return np.array(basis, dtype=float)


def _rref_nullspace(rows: List[List[Fraction]], ncols: int) -> List[List[Fraction]]:
    mat = [list(r) for r in rows]
    pivots = []
    r = 0
    for col in range(ncols):
        pivot = next((i for i in range(r, len(mat)) if mat[i][col] != 0), None)
        if pivot is None:
            continue
        mat[r], mat[pivot] = mat[pivot], mat[r]
        pv = mat[r][col]
        mat[r] = [x / pv for x in mat[r]]
        for i in range(len(mat)):
            if i != r and mat[i][col] != 0:
                f = mat[i][col]
                mat[i] = [a - f * b for a, b in zip(mat[i], mat[r])]
        pivots.append(col)
        r += 1
        if r == len(mat):
            break
    free = [c for c in range(ncols) if c not in pivots]
    basis = []
    for fcol in free:
        vec = [Fraction(0)] * ncols
        vec[fcol] = Fraction(1)
        for row, pcol in enumerate(pivots):
            vec[pcol] = -mat[row][fcol]
        basis.append(vec)
    return basis


def left_nullspace(matrix) -> List[List[int]]:
    """Integer basis of ``{y : y @ matrix == 0}``, computed exactly."""
    matrix = np.asarray(matrix)
    if matrix.size == 0:
        return [[1 if i == j else 0 for j in range(matrix.shape[0])] for i in range(matrix.shape[0])]
    rows = [[Fraction(int(v)) for v in matrix[:, j]] for j in range(matrix.shape[1])]
    out = []
    for vec in _rref_nullspace(rows, matrix.shape[0]):
        denom = reduce(lambda a, b: a * b // math.gcd(a, b), (v.denominator for v in vec), 1)
        ints = [int(v * denom) for v in vec]
        g = reduce(math.gcd, (abs(v) for v in ints if v), 0) or 1
        ints = [v // g for v in ints]
        first = next(v for v in ints if v)
        if first < 0:
            ints = [-v for v in ints]
        out.append(ints)
    return out


def derive_odes(network: ReactionNetwork, inflows=None,
                initial: Optional[Mapping[str, float]] = None) -> FlowModel:
    """Flow model of ``network``.

    ``inflows`` defaults to the network's attached inflows; entries may be
    :class:`Inflow` objects or ``(name, species)`` / ``(name, species,
    rate)`` tuples. Inflow columns follow the reaction columns.
    """
    if inflows is None:
        inflows = network.inflows
    species = network.species_ids
    columns: List[str] = []
    rates: List[RateTerm] = []
    cols: List[List[int]] = []
    emitters = []
    for r in network.reactions:
        columns.append(r.id)
        col = [r.products.get(s, 0) - r.reactants.get(s, 0) for s in species]
        cols.append(col)
        rates.append(RateTerm(r.k_name, r.k, tuple((s, n) for s, n in r.reactants.items() if n)))
        if r.emit_tag == "transmit":
            emitters.append(r.id)
    inflow_names = []
    for f in inflows:
        if isinstance(f, Inflow):
            name, target = f.name, f.species
            value = None if callable(f.rate) else float(f.rate)
        else:
            name, target = f[0], f[1]
            value = float(f[2]) if len(f) > 2 and f[2] is not None else None
        if target not in network.species:
            raise ConfigurationError(f"inflow {name!r} targets unknown species {target!r}")
        if name in columns:
            raise ConfigurationError(f"column name {name!r} used twice")
        columns.append(name)
        inflow_names.append(name)
        cols.append([1 if s == target else 0 for s in species])
        rates.append(RateTerm(name, value, ()))
    matrix = np.array(cols, dtype=int).T if cols else np.zeros((len(species), 0), dtype=int)
    stoich = StoichiometricMatrix(matrix.reshape(len(species), len(columns)), species, columns)
    return FlowModel(stoich, rates, inflow_names, network.payload_species, emitters, initial)


def _as_vector(model: FlowModel, c) -> np.ndarray:
    if isinstance(c, Mapping):
        unknown = set(c) - set(model.species)
        if unknown:
            raise ConfigurationError(f"unknown species {sorted(unknown)}")
        return np.array([float(c.get(s, 0.0)) for s in model.species])
    return np.asarray(c, dtype=float).copy()


def integrate(model: FlowModel, c0, t_end: float, dt: float, inflow_values=None,
              record_every: int = 1) -> Trajectory:
    """Fixed-step RK4. Negative components are clamped to zero and logged."""
    c = _as_vector(model, c0)
    if np.any(c < 0):
        raise ConfigurationError("initial concentrations must be non-negative")
    if dt <= 0:
        raise ConfigurationError("dt must be positive")
    k = model._constants(inflow_values)
    n_steps = int(round(t_end / dt))
    times = [0.0]
    values = [c.copy()]
    clamps: List[Tuple[float, str]] = []
    f = model.rhs
    for i in range(1, n_steps + 1):
        k1 = f(c, k=k)
        k2 = f(c + 0.5 * dt * k1, k=k)
        k3 = f(c + 0.5 * dt * k2, k=k)
        k4 = f(c + dt * k3, k=k)
        c = c + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(c)):
            raise IntegrationDiverged(f"non-finite state at t={i * dt:g}")
        neg = c < 0
        if np.any(neg):
            for idx in np.nonzero(neg)[0]:
                clamps.append((i * dt, model.species[idx]))
                log.debug("clamped %s at t=%g", model.species[idx], i * dt)
            c[neg] = 0.0
        if i % record_every == 0 or i == n_steps:
            times.append(i * dt)
            values.append(c.copy())
    return Trajectory(np.array(times), np.array(values), list(model.species), clamps)


def _species_bounds(model: FlowModel, totals: np.ndarray, laws: np.ndarray) -> np.ndarray:
    bounds = np.full(len(model.species), np.inf)
    for y, total in zip(laws, totals):
        if np.all(y >= 0):
            for s in np.nonzero(y)[0]:
                bounds[s] = min(bounds[s], total / y[s])
    return bounds


def _service_capacity(model: FlowModel, k: np.ndarray, bounds: np.ndarray) -> Dict[str, float]:
    """Max sustainable payload throughput out of each payload species."""
    species = model.species
    reaction_cols = [j for j in range(len(model.rates)) if not model._is_inflow[j]]
    max_rate = {}
    for j in reaction_cols:
        rate = k[j]
        for s in np.nonzero(model._chi[j])[0]:
            rate *= bounds[s] ** model._chi[j, s]
        max_rate[j] = rate
    memo: Dict[str, float] = {}

    def cap(s_name: str, seen=()) -> float:
        if s_name in memo:
            return memo[s_name]
        if s_name in seen:
            return math.inf
        i = species.index(s_name)
        total = 0.0
        for j in reaction_cols:
            chi = model._chi[j, i]
            if chi <= 0:
                continue
            downstream = [species[x] for x in np.nonzero(model.stoich.matrix[:, j] > 0)[0]
                          if species[x] in model.payload]
            limit = max_rate[j] * chi
            for d in downstream:
                limit = min(limit, cap(d, seen + (s_name,)))
            total += limit
        memo[s_name] = total
        return total

    return {s: cap(s) for s in model.payload}


def _start_point(model, k, totals, laws, clamp) -> np.ndarray:
    n = len(model.species)
    c = np.full(n, np.nan)
    for y, total in zip(laws, totals):
        members = np.nonzero(y)[0]
        if np.all(y >= 0) and len(members):
            for s in members:
                share = total / len(members) / y[s]
                c[s] = share if np.isnan(c[s]) else min(c[s], share)
    total_inflow = sum(k[j] for j in range(len(model.rates)) if model._is_inflow[j])
    for i in range(n):
        if np.isnan(c[i]):
            consumers = [j for j in range(len(model.rates)) if model._chi[j, i] > 0]
            c[i] = total_inflow / k[consumers[0]] if consumers and total_inflow > 0 else 0.0
    for s, v in clamp.items():
        c[model.species.index(s)] = v
    return c


def steady_state(model: FlowModel, inflow_values=None, c0=None, *, clamp=None,
                 max_iter: int = 200, tol: float = 1e-11):
    """Root of ``Psi @ v(c) = 0`` on the conservation manifold through ``c0``.

    ``c0`` defaults to the model's initial counts and fixes the conserved
    totals. Species listed in ``clamp`` are held at the given values.
    Returns a species->concentration dict, or :class:`Unbounded` when a
    payload species receives more than the network can serve.
    """
    clamp = dict(clamp or {})
    k = model._constants(inflow_values)
    n = len(model.species)
    c_ref = _as_vector(model, model.initial if c0 is None else c0)
    laws = model.conservation_matrix()
    totals = laws @ c_ref if len(laws) else np.zeros(0)
    if not clamp:
        bounds = _species_bounds(model, totals, laws)
        caps = _service_capacity(model, k, bounds)
        offered: Dict[str, float] = {}
        for j, term in enumerate(model.rates):
            if model._is_inflow[j]:
                target = model.species[int(np.nonzero(model.stoich.matrix[:, j])[0][0])]
                offered[target] = offered.get(target, 0.0) + k[j]
        for s, v in offered.items():
            if s in caps and v > 0 and v >= caps[s] * (1 - 1e-12):
                return Unbounded(s, float(v), float(caps[s]), float(min(v, caps[s])))
    free = [i for i in range(n) if model.species[i] not in clamp]
    psi = model._psi
    # Independent balance rows plus one row per conservation law.
    rows: List[int] = []
    rank = 0
    sub = psi[free]
    for i in range(len(free)):
        trial = rows + [i]
        r = np.linalg.matrix_rank(sub[trial]) if sub.size else 0
        if r > rank:
            rows, rank = trial, r
    # Conservation laws only constrain systems that are not clamped open.
    use_laws = [(y, t) for y, t in zip(laws, totals) if not any(y[model.species.index(s)] for s in clamp)]
    if len(rows) + len(use_laws) != len(free):
        use_laws = use_laws[: max(0, len(free) - len(rows))]
    c = _start_point(model, k, totals, laws, clamp)

    def residual(x):
        full = c.copy()
        full[free] = x
        bal = (psi @ model.rate_vector(full, k=k))[free][rows]
        cons = [y @ full - t for y, t in use_laws]
        return np.concatenate([bal, np.array(cons)]), full

    def jac(full):
        j = (psi @ model.rate_jacobian(full, k))[np.ix_(free, free)][rows]
        cons = [y[free] for y, _ in use_laws]
        return np.vstack([j] + ([np.array(cons)] if cons else []))

    x = c[free]
    scale = 1.0 + np.max(np.abs(np.concatenate([totals, k, [1.0]])))
    for _ in range(max_iter):
        res, full = residual(x)
        norm = np.max(np.abs(res)) if res.size else 0.0
        if norm < tol * scale:
            return dict(zip(model.species, np.where(np.abs(full) < tol * scale, 0.0, full).tolist()))
        J = jac(full)
        try:
            delta = np.linalg.solve(J, -res)
        except np.linalg.LinAlgError:
            delta = np.linalg.lstsq(J, -res, rcond=None)[0]
        lam = 1.0
        accepted = False
        while lam > 1e-8:
            cand = x + lam * delta
            cand = np.where(cand < 0, 0.0, cand)
            new_res, _ = residual(cand)
            if np.max(np.abs(new_res)) < norm:
                x = cand
                accepted = True
                break
            lam *= 0.5
        if not accepted:
            break
    raise NumericalFailure("steady-state Newton iteration did not converge")


def michaelis_menten_rate(c_S: float, e0: float, k1: float, k2: float) -> float:
    """Token-loop throughput ``e0*k2*c_S / (k2/k1 + c_S)``."""
    if c_S < 0 or e0 < 0 or k2 < 0 or not k1 > 0:
        raise ConfigurationError("michaelis_menten_rate needs c_S, e0, k2 >= 0 and k1 > 0")
    return e0 * k2 * c_S / ((k2 / k1) + c_S)


def settle_time_estimate(e0: float, k1: float, k2: float, k_F: float,
                         tolerance_fraction: float, load_fraction: float = 0.5) -> float:
    """Time for the slowest linear mode of the rate controller to decay.

    The controller is linearized at the steady state reached under an
    offered load of ``load_fraction * e0 * k2`` (half-saturation by
    default). With the output stage enabled its mode decays at ``k_F``,
    which dominates whenever it is the slowest rate. ``k_F == 0``
    disables the stage.
    """
    if min(e0, k1, k2) <= 0 or k_F < 0:
        raise ConfigurationError("settle_time_estimate needs positive e0, k1, k2 and k_F >= 0")
    if not 0 < tolerance_fraction <= 1:
        raise ConfigurationError("tolerance_fraction must be in (0, 1]")
    if not 0 < load_fraction < 1:
        raise ConfigurationError("load_fraction must be in (0, 1)")
    if tolerance_fraction == 1:
        return 0.0
    from .crc import crc_network

    network, initial = crc_network(e0, k1, k2, k_F)
    model = derive_odes(network, [("v_src", "S")], initial=initial)
    v = load_fraction * e0 * k2
    point = steady_state(model, {"v_src": v})
    if isinstance(point, Unbounded):
        raise StabilityViolation("operating point is overloaded")
    c = np.array([point[s] for s in model.species])
    eig = np.linalg.eigvals(model.jacobian(c, {"v_src": v}))
    n_laws = len(model.conservation_matrix())
    order = np.argsort(np.abs(eig))
    modes = eig[order[n_laws:]]
    scale = max(1.0, float(np.max(np.abs(eig))))
    if len(modes) == 0:
        return 0.0
    if np.any(modes.real >= -1e-12 * scale):
        raise StabilityViolation(f"non-decaying mode at the operating point: {modes}")
    slowest = float(np.min(-modes.real))
    return -math.log(tolerance_fraction) / slowest
