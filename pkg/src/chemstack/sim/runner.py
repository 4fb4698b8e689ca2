"""Scenario runs and their CSV artifacts.

Column contracts (all files are comma separated with a header row):

``fitness.csv``
    generation, genome, fitness, valid, blueprint_id
``best.csv``
    generation, best_fitness, mean_fitness, blueprint_id, blueprint
``rates.csv``
    generation, genome, time, app_rate, phy_rate (B/s, 1 s bins)
``mean_curve.csv`` (``--runs`` only)
    generation, runs, mean_best, std_best, normalized_best

``blueprints.log`` holds one line per trial: generation, genome,
blueprint id, fitness and the blueprint text.
"""

from __future__ import annotations

import csv
import math
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from ..errors import ConfigurationError
from ..evolution import Generation, evolve, trial_seed
from ..stack.blueprint import GenomeLayout, blueprint_from_path, parse_blueprint
from ..stack.composer import InvalidBlueprint, compose
from ..stack.trial import TrialRecord, observed_settle_time, run_trial

REFERENCE_SEEDS = 25


def num(x: float) -> str:
    """Stable text form of a float for CSV output."""
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return format(float(x), ".9g")


def run_seed(base: int, run: int) -> int:
    return (int(base) + run) & 0xFFFFFFFF


@dataclass
class RunResult:
    seed: int
    out_dir: Optional[Path]
    history: List[Generation]

    @property
    def best_curve(self) -> List[float]:
        return [g.best_fitness for g in self.history]

    @property
    def final_best(self) -> TrialRecord:
        last = self.history[-1]
        return last.records[last.best_index]


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_rates(path: Path, rows) -> None:
    _write_csv(path, ["generation", "genome", "time", "app_rate", "phy_rate"], rows)


def rate_rows(generation: int, genome: int, record: TrialRecord):
    for t, (app, phy) in enumerate(zip(record.app_rate, record.phy_rate)):
        yield [generation, genome, t, num(app), num(phy)]


def run_scenario(scenario, seed: int, out_dir=None, generations: Optional[int] = None) -> RunResult:
    """Evolve ``scenario`` with ``seed`` and write the four artifacts into
    ``out_dir`` (skipped when ``out_dir`` is None)."""
    scenario = scenario.with_seed(seed)
    if generations is not None:
        scenario = scenario.with_generations(generations)
    fitness_rows, rates, log_lines = [], [], []

    def on_trial(g, i, genes, f, record):
        fitness_rows.append([g, i, num(f), int(record.valid), record.blueprint_id])
        rates.extend(rate_rows(g, i, record))
        log_lines.append(f"{g} {i} {record.blueprint_id} {num(f)} {record.blueprint_text}")

    history = evolve(scenario, on_trial=on_trial)
    result = RunResult(seed, None, history)
    if out_dir is None:
        return result
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "fitness.csv", ["generation", "genome", "fitness", "valid", "blueprint_id"],
               fitness_rows)
    best_rows = []
    for gen in history:
        rec = gen.records[gen.best_index]
        best_rows.append([gen.index, num(gen.best_fitness), num(statistics.fmean(gen.fitnesses)),
                          rec.blueprint_id, rec.blueprint_text])
    _write_csv(out / "best.csv", ["generation", "best_fitness", "mean_fitness", "blueprint_id",
                                  "blueprint"], best_rows)
    write_rates(out / "rates.csv", rates)
    (out / "blueprints.log").write_text("\n".join(log_lines) + "\n")
    result.out_dir = out
    return result


def reference_fitness(scenario, seeds: int = REFERENCE_SEEDS) -> Optional[float]:
    """Mean trial fitness of the scenario's hand-configured optimum over
    ``seeds`` trial seeds, or None when the scenario names no optimum."""
    if scenario.optimum is None:
        return None
    registry = scenario.registry()
    layout = GenomeLayout(registry)
    stack = compose(parse_blueprint(scenario.optimum, layout), registry)
    if isinstance(stack, InvalidBlueprint):
        raise ConfigurationError(f"scenario optimum does not compose: {stack.reason}")
    fits = []
    for s in range(seeds):
        stack = compose(stack.blueprint, registry)
        fits.append(run_trial(stack, scenario, seed=s, registry=registry).fitness)
    return statistics.fmean(fits)


def mean_curve(results: Sequence[RunResult], reference: Optional[float] = None) -> List[Dict]:
    """Per-generation mean of the best fitness across runs."""
    if not results:
        raise ConfigurationError("mean_curve needs at least one run")
    n_gen = min(len(r.history) for r in results)
    rows = []
    for g in range(n_gen):
        best = [r.history[g].best_fitness for r in results]
        mean = statistics.fmean(best)
        rows.append({
            "generation": g + 1,
            "runs": len(best),
            "mean_best": mean,
            "std_best": statistics.pstdev(best),
            "normalized_best": min(1.0, mean / reference) if reference else math.nan,
        })
    return rows


def run_many(scenario, seed: int, runs: int, out_dir=None, generations: Optional[int] = None,
             reference: Optional[float] = None) -> List[RunResult]:
    """``runs`` independent evolutions with seeds ``seed, seed+1, ...``.

    Each run writes into ``out_dir/run-NNN``; ``mean_curve.csv`` goes into
    ``out_dir`` itself.
    """
    if runs < 1:
        raise ConfigurationError("runs must be >= 1")
    results = []
    for r in range(runs):
        sub = None if out_dir is None else Path(out_dir) / f"run-{r:03d}"
        results.append(run_scenario(scenario, run_seed(seed, r), sub, generations))
    if out_dir is not None:
        rows = mean_curve(results, reference)
        _write_csv(Path(out_dir) / "mean_curve.csv",
                   ["generation", "runs", "mean_best", "std_best", "normalized_best"],
                   [[x["generation"], x["runs"], num(x["mean_best"]), num(x["std_best"]),
                     num(x["normalized_best"])] for x in rows])
    return results


def replay(scenario, blueprint_text: str, seed: int, out_dir=None,
           duration: Optional[float] = None) -> TrialRecord:
    """Single trial of one blueprint; writes ``rates.csv`` when ``out_dir`` is given."""
    registry = scenario.registry()
    layout = GenomeLayout(registry)
    stack = compose(parse_blueprint(blueprint_text, layout), registry)
    if isinstance(stack, InvalidBlueprint):
        raise ConfigurationError(f"blueprint does not compose: {stack.reason}: {stack.detail}")
    record = run_trial(stack, scenario, duration=duration, seed=seed, registry=registry)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_rates(out / "rates.csv", rate_rows(0, 0, record))
    return record


@dataclass
class SmoothingPoint:
    k_F: float
    cov: float
    settle: float
    mean_delay: float
    fitness: float


def smoothing_sweep(scenario, k_F_values: Sequence[float], seed: int = 0,
                    path: Sequence[str] = ("crc", "ipv4"), band: float = 0.2,
                    window: int = 4) -> List[SmoothingPoint]:
    """Trial one fixed stack per output-filter rate ``k_F``.

    Every trial runs ``scenario.trial.duration`` seconds (extended if the
    slowest filter needs more) so the settle times are comparable.
    """
    registry = scenario.registry()
    layout = GenomeLayout(registry)
    points = []
    for k_F in k_F_values:
        bp = blueprint_from_path(layout, path, {"crc": {"k_F": k_F}})
        stack = compose(bp, registry)
        if isinstance(stack, InvalidBlueprint):
            raise ConfigurationError(f"path {list(path)} does not compose: {stack.reason}")
        rec = run_trial(stack, scenario, seed=trial_seed(seed, 0, 0), registry=registry)
        points.append(SmoothingPoint(k_F, rec.cov, observed_settle_time(rec.phy_rate, band, window),
                                     rec.mean_delay, rec.fitness))
    return points
