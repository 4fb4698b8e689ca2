"""Genetic search over stack blueprints.

Population of genomes, roulette parent selection, midpoint crossover,
per-gene Gaussian mutation with sigma equal to half the gene's domain
width, and an elite copied unchanged into every generation.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

from .errors import ConfigurationError, EmptyMeasurement

INIT_MODES = ("full-stack", "random")
RATE_TARGET = "rate-target"
CONSTANCY_DELAY = "constancy-delay"


@dataclass
class EvolutionConfig:
    population_size: int = 3
    elite_size: int = 1
    crossover_p: float = 0.1
    mutation_p: float = 0.9
    generations: int = 25
    seed: int = 0
    init: str = "full-stack"

    def __post_init__(self):
        if self.population_size < 1:
            raise ConfigurationError("population_size must be >= 1")
        if not 0 <= self.elite_size < self.population_size:
            raise ConfigurationError("elite_size must satisfy 0 <= elite < population")
        for name in ("crossover_p", "mutation_p"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigurationError(f"{name} must be in [0, 1], got {p}")
        if self.generations < 1:
            raise ConfigurationError("generations must be >= 1")
        if self.init not in INIT_MODES:
            raise ConfigurationError(f"init must be one of {INIT_MODES}, got {self.init!r}")


@dataclass
class FitnessSpec:
    """Fitness function and its weights.

    ``rate-target``: Gaussian around ``target`` (B/s at the physical
    layer) of width ``sigma_fraction * target``, times delivery ratio and
    overhead factor raised to their weights.

    ``constancy-delay``: ``exp(-w_var * CoV) * exp(-w_delay * delay / d_ref)``.
    """

    variant: str = RATE_TARGET
    target: float = 50_000.0
    sigma_fraction: float = 0.05
    w_delivery: float = 1.0
    w_overhead: float = 1.0
    w_var: float = 1.0
    w_delay: float = 1.0
    d_ref: float = 1.0

    def __post_init__(self):
        if self.variant not in (RATE_TARGET, CONSTANCY_DELAY):
            raise ConfigurationError(f"unknown fitness variant {self.variant!r}")
        if self.target <= 0 or self.sigma_fraction <= 0 or self.d_ref <= 0:
            raise ConfigurationError("target, sigma_fraction and d_ref must be positive")
        if min(self.w_delivery, self.w_overhead, self.w_var, self.w_delay) < 0:
            raise ConfigurationError("fitness weights must be >= 0")

    @property
    def sigma(self) -> float:
        return self.sigma_fraction * self.target


def _require_window(record) -> None:
    if record.measure_seconds <= 0 or not record.measured_bins:
        raise EmptyMeasurement("trial has no post-settle measurement window")


def fitness_rate_target(record, spec: FitnessSpec) -> float:
    _require_window(record)
    gauss = math.exp(-(record.mean_phy_rate - spec.target) ** 2 / (2.0 * spec.sigma ** 2))
    f = gauss * record.delivery_ratio ** spec.w_delivery * record.overhead_factor ** spec.w_overhead
    return min(1.0, max(0.0, f))


def fitness_constancy_delay(record, spec: FitnessSpec) -> float:
    _require_window(record)
    if record.delivered == 0 or record.mean_phy_rate <= 0:
        return 0.0
    f = math.exp(-spec.w_var * record.cov) * math.exp(-spec.w_delay * record.mean_delay / spec.d_ref)
    return min(1.0, max(0.0, f))


def fitness(record, spec: FitnessSpec) -> float:
    if spec.variant == RATE_TARGET:
        return fitness_rate_target(record, spec)
    return fitness_constancy_delay(record, spec)


# --- operators ----------------------------------------------------------------

def _roulette(fitnesses: Sequence[float], rng: random.Random) -> int:
    total = float(sum(fitnesses))
    if total <= 0:
        return rng.randrange(len(fitnesses))
    x = rng.random() * total
    acc = 0.0
    for i, f in enumerate(fitnesses):
        acc += f
        if x < acc:
            return i
    # float round-off: last genome with positive fitness
    return max(i for i, f in enumerate(fitnesses) if f > 0)


def select_parents(population: Sequence, fitnesses: Sequence[float],
                   rng: random.Random) -> Tuple[object, object]:
    """Two independent fitness-proportional draws (uniform if all fitness is 0)."""
    if len(population) != len(fitnesses) or not population:
        raise ConfigurationError("population and fitnesses must be non-empty and aligned")
    return population[_roulette(fitnesses, rng)], population[_roulette(fitnesses, rng)]


def mutate_gene(value: int, lo: int, hi: int, rng: random.Random) -> int:
    """Normal(value, (hi - lo) / 2), rounded then clipped to [lo, hi]."""
    sigma = (hi - lo) / 2.0
    if sigma == 0:
        return lo
    drawn = int(round(rng.gauss(value, sigma)))
    return min(max(drawn, lo), hi)


def recombine(parent_a: Sequence[int], parent_b: Sequence[int], layout, config: EvolutionConfig,
              rng: random.Random) -> List[int]:
    """Copy genes chromosome by chromosome from the current parent, switching
    parents with probability ``crossover_p`` at each chromosome midpoint,
    then mutate each gene with probability ``mutation_p``."""
    if len(parent_a) != len(layout) or len(parent_b) != len(layout):
        raise ConfigurationError("parents do not match the genome layout")
    parents = (list(parent_a), list(parent_b))
    cur = 0
    child: List[int] = []
    for start, end in layout.chromosome_bounds():
        mid = start + (end - start) // 2
        for i in range(start, end):
            if i == mid and rng.random() < config.crossover_p:
                cur = 1 - cur
            child.append(parents[cur][i])
    for i, (lo, hi) in enumerate(layout.domains):
        if rng.random() < config.mutation_p:
            child[i] = mutate_gene(child[i], lo, hi, rng)
    return child


def elite_indices(fitnesses: Sequence[float], n: int) -> List[int]:
    """Indices of the ``n`` fittest genomes; ties go to the lower index."""
    return sorted(range(len(fitnesses)), key=lambda i: (-fitnesses[i], i))[:n]


def next_generation(population: Sequence[Sequence[int]], fitnesses: Sequence[float], layout,
                    config: EvolutionConfig, rng: random.Random) -> List[List[int]]:
    if len(population) != config.population_size:
        raise ConfigurationError(
            f"population has {len(population)} genomes, expected {config.population_size}")
    new = [list(population[i]) for i in elite_indices(fitnesses, config.elite_size)]
    while len(new) < config.population_size:
        a, b = select_parents(population, fitnesses, rng)
        new.append(recombine(a, b, layout, config, rng))
    return new


def random_genome(layout, rng: random.Random) -> List[int]:
    return [rng.randint(lo, hi) for lo, hi in layout.domains]


def initial_population(layout, config: EvolutionConfig, rng: random.Random) -> List[List[int]]:
    """``full-stack``: every module present in genome order, controls at
    their lowest gene. ``random``: uniform genes."""
    from .stack.blueprint import full_stack_genome

    if config.init == "random":
        return [random_genome(layout, rng) for _ in range(config.population_size)]
    return [full_stack_genome(layout) for _ in range(config.population_size)]


@dataclass
class Generation:
    index: int
    population: List[List[int]]
    fitnesses: List[float]
    records: list = field(default_factory=list)

    @property
    def best_index(self) -> int:
        return elite_indices(self.fitnesses, 1)[0]

    @property
    def best_fitness(self) -> float:
        return self.fitnesses[self.best_index]

    @property
    def best(self) -> List[int]:
        return self.population[self.best_index]


def trial_seed(base: int, generation: int, index: int) -> int:
    """Seed of one trial, derived from the run seed and its position."""
    return (int(base) * 1_000_003 + generation * 1009 + index) & 0xFFFFFFFF


def evolve(scenario, config: Optional[EvolutionConfig] = None, registry=None,
           evaluate: Optional[Callable] = None, on_trial: Optional[Callable] = None,
           initial: Optional[List[List[int]]] = None) -> List[Generation]:
    """Run the generation loop. Generations are numbered from 1.

    ``evaluate(genes, seed) -> (fitness, record)`` defaults to composing
    the blueprint and running a trial of ``scenario``. ``on_trial`` is
    called with ``(generation, index, genes, fitness, record)``.
    """
    from .stack.blueprint import GenomeLayout

    config = config or scenario.evolution
    registry = registry or scenario.registry()
    layout = GenomeLayout(registry)
    if evaluate is None:
        from .stack.trial import evaluate_genome

        def evaluate(genes, seed):
            return evaluate_genome(genes, layout, scenario, seed, registry)

    rng = random.Random(trial_seed(config.seed, 0, 0x5EED))
    population = [list(g) for g in initial] if initial else initial_population(layout, config, rng)
    history: List[Generation] = []
    for g in range(1, config.generations + 1):
        fits, records = [], []
        for i, genes in enumerate(population):
            f, record = evaluate(genes, trial_seed(config.seed, g, i))
            fits.append(f)
            records.append(record)
            if on_trial is not None:
                on_trial(g, i, genes, f, record)
        history.append(Generation(g, [list(x) for x in population], fits, records))
        if g < config.generations:
            population = next_generation(population, fits, layout, config, rng)
    return history
