"""Command line entry point.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
``CHEMSTACK_OUT`` and ``CHEMSTACK_SEED`` supply defaults for ``--out``
and ``--seed``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional

from .errors import ConfigurationError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
MM_POINTS = (0.5, 1, 2, 5, 10, 25, 50, 125)

log = logging.getLogger("chemstack")


def _env_seed() -> int:
    raw = os.environ.get("CHEMSTACK_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ConfigurationError(f"CHEMSTACK_SEED must be an integer, got {raw!r}") from None


def _out_dir(arg: Optional[str], default: str) -> Path:
    return Path(arg or os.environ.get("CHEMSTACK_OUT") or default)


def _parse_sets(items: List[str]) -> Dict[str, float]:
    out = {}
    for item in items or []:
        name, _, value = item.partition("=")
        try:
            out[name.strip()] = float(value)
        except ValueError:
            raise ConfigurationError(f"--set expects name=number, got {item!r}") from None
    return out


# --- run / replay / smooth ---------------------------------------------------

def cmd_run(args) -> int:
    from .sim.runner import reference_fitness, run_many, run_scenario
    from .sim.scenario import load_scenario

    scenario = load_scenario(args.scenario)
    seed = args.seed if args.seed is not None else _env_seed()
    out = _out_dir(args.out, f"out/{scenario.name}-seed{seed}")
    if args.runs == 1:
        result = run_scenario(scenario, seed, out, args.generations)
        rec = result.final_best
        print(f"best fitness {result.best_curve[-1]:.4f} after {len(result.history)} generations")
        print(f"best stack {rec.blueprint_text}")
    else:
        ref = reference_fitness(scenario) if scenario.optimum else None
        results = run_many(scenario, seed, args.runs, out, args.generations, ref)
        finals = [r.best_curve[-1] for r in results]
        print(f"{len(results)} runs, mean final best fitness {sum(finals) / len(finals):.4f}")
    print(f"artifacts in {out}")
    return EXIT_OK


def _blueprint_text(arg: str, scenario) -> str:
    if arg == "optimum":
        if scenario.optimum is None:
            raise ConfigurationError(f"scenario {scenario.name} defines no optimum")
        return scenario.optimum
    path = Path(arg)
    return path.read_text() if path.is_file() else arg


def cmd_replay(args) -> int:
    from .sim.runner import replay
    from .sim.scenario import load_scenario

    scenario = load_scenario(args.scenario)
    seed = args.seed if args.seed is not None else _env_seed()
    out = _out_dir(args.out, f"out/{scenario.name}-replay")
    rec = replay(scenario, _blueprint_text(args.blueprint, scenario), seed, out, args.duration)
    print(f"fitness {rec.fitness:.4f}  mean phy rate {rec.mean_phy_rate:.1f} B/s  "
          f"delivery {rec.delivery_ratio:.3f}  cov {rec.cov:.3f}  settle {rec.settle:.2f} s")
    print(f"rates in {out / 'rates.csv'}")
    return EXIT_OK


def cmd_smooth(args) -> int:
    from .sim.runner import smoothing_sweep
    from .sim.scenario import load_scenario

    scenario = load_scenario(args.scenario)
    seed = args.seed if args.seed is not None else _env_seed()
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["k_F", "cov", "settle", "mean_delay", "fitness"])
    for p in smoothing_sweep(scenario, args.k_F, seed):
        w.writerow([p.k_F, f"{p.cov:.6g}", f"{p.settle:g}", f"{p.mean_delay:.6g}", f"{p.fitness:.6g}"])
    return EXIT_OK


# --- analyze -----------------------------------------------------------------

def analyze(path: str, vsrc: Optional[float], overrides=None) -> dict:
    """Flow analysis of a reaction file as a plain dict."""
    from .chem.grammar import load_reactions
    from .flow import Unbounded, derive_odes, steady_state

    rf = load_reactions(path, overrides)
    model = derive_odes(rf.network, list(rf.inflows.items()), initial=rf.initial)
    result = {
        "species": list(model.species),
        "columns": list(model.stoich.columns),
        "psi": model.stoich.as_dict(),
        "rates": {c: str(r) for c, r in zip(model.stoich.columns, model.rates)},
        "odes": model.equations(),
        "conserved": model.conserved_sums(),
    }
    if vsrc is not None:
        values = {name: vsrc for name in rf.inflows}
        point = steady_state(model, values)
        if isinstance(point, Unbounded):
            result["steady_state"] = {"unbounded": point.species, "inflow": point.inflow,
                                      "capacity": point.capacity}
        else:
            result["steady_state"] = point
            result["emission"] = model.emission_rate([point[s] for s in model.species], values)
    if len(rf.inflows) == 1:
        target = next(iter(rf.inflows.values()))
        zero = {name: 0.0 for name in rf.inflows}
        curve = []
        for c in MM_POINTS:
            point = steady_state(model, zero, clamp={target: c})
            curve.append((c, model.emission_rate([point[s] for s in model.species], zero)))
        result["mm_curve"] = {"species": target, "points": curve}
    return result


def _print_analysis(res: dict, fmt: str) -> None:
    if fmt == "json":
        print(json.dumps(res, indent=2))
        return
    if fmt == "csv":
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(["section", "row", "column", "value"])
        for s, row in res["psi"].items():
            for c, v in row.items():
                w.writerow(["psi", s, c, v])
        for c, r in res["rates"].items():
            w.writerow(["rate", c, "", r])
        for i, law in enumerate(res["conserved"]):
            for s, v in law.items():
                w.writerow(["conserved", i, s, v])
        ss = res.get("steady_state")
        if ss is not None:
            for s, v in ss.items():
                w.writerow(["steady_state", s, "", f"{v:.9g}" if isinstance(v, float) else v])
        if "emission" in res:
            w.writerow(["emission", "", "", f"{res['emission']:.9g}"])
        if "mm_curve" in res:
            for c, v in res["mm_curve"]["points"]:
                w.writerow(["mm_curve", f"{c:g}", res["mm_curve"]["species"], f"{v:.9g}"])
        return
    from .flow import StoichiometricMatrix
    import numpy as np

    species, columns = res["species"], res["columns"]
    matrix = np.array([[res["psi"][s][c] for c in columns] for s in species], dtype=int)
    print("Stoichiometric matrix:")
    print(StoichiometricMatrix(matrix, species, columns))
    print("\nRates:")
    for c, r in res["rates"].items():
        print(f"  {c}: {r}")
    print("\nODEs:")
    for line in res["odes"]:
        print("  " + line)
    print("\nConserved sums:")
    for law in res["conserved"]:
        print("  " + " + ".join(f"{v}*c_{s}" if v != 1 else f"c_{s}" for s, v in law.items()))
    ss = res.get("steady_state")
    if ss is not None:
        print("\nSteady state:")
        if "unbounded" in ss:
            print(f"  unbounded: {ss['unbounded']} receives {ss['inflow']:g} > capacity {ss['capacity']:g}")
        else:
            for s, v in ss.items():
                print(f"  c_{s} = {v:.6g}")
            print(f"  emission rate = {res['emission']:.6g}")
    if "mm_curve" in res:
        print(f"\nService rate vs clamped c_{res['mm_curve']['species']}:")
        for c, v in res["mm_curve"]["points"]:
            print(f"  {c:>7g}  {v:.6g}")


def cmd_analyze(args) -> int:
    res = analyze(args.reactions, args.vsrc, _parse_sets(args.set))
    _print_analysis(res, args.format)
    return EXIT_OK


# --- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chemstack", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="evolve stacks for a scenario")
    r.add_argument("scenario", help="scenario file or built-in name (E1, E2, E3)")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--out", default=None, help="artifact directory")
    r.add_argument("--generations", type=int, default=None)
    r.add_argument("--runs", type=int, default=1, help="independent runs with seeds seed..seed+runs-1")
    r.set_defaults(fn=cmd_run)

    a = sub.add_parser("analyze", help="flow analysis of a reaction file")
    a.add_argument("reactions", help="reaction grammar file")
    a.add_argument("--vsrc", type=float, default=None, help="inflow rate for the steady state")
    a.add_argument("--set", action="append", metavar="NAME=VALUE", help="override a constant")
    a.add_argument("--format", choices=("text", "csv", "json"), default="text")
    a.set_defaults(fn=cmd_analyze)

    y = sub.add_parser("replay", help="single trial of one blueprint")
    y.add_argument("scenario")
    y.add_argument("blueprint", help="blueprint file, inline text, or 'optimum'")
    y.add_argument("--seed", type=int, default=None)
    y.add_argument("--out", default=None)
    y.add_argument("--duration", type=float, default=None)
    y.set_defaults(fn=cmd_replay)

    s = sub.add_parser("smooth", help="output CoV and settle time per k_F on a fixed CRC/IPv4 stack")
    s.add_argument("scenario")
    s.add_argument("--k-F", dest="k_F", type=float, nargs="+", default=[5.0, 0.5, 0.05])
    s.add_argument("--seed", type=int, default=None)
    s.set_defaults(fn=cmd_smooth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - top-level boundary
        log.debug("runtime failure", exc_info=True)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
