"""Command-line interface: population generation, scenario runs, reporting.

Subcommands:
    gen-pop  generate and save a synthetic population
    run      run one scenario (or all five) and export CSV/JSON results
    metrics  recompute summary metrics from exported per-avatar CSVs
    report   print summary tables from a summary.json
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

from basalkit.avatars import PopulationTargets, generate_population, load_population, save_population
from basalkit.control import TitrationConfig
from basalkit.fasting import PriorSpec
from basalkit.pk import get_drug, load_drug_file
from basalkit.trial import SCENARIO_PRESETS, export_results, run_scenario, summarize_csv_dir


def _load_config(path: str | None) -> dict:
    """Key-value config file (JSON). Recognized keys:

    titration: object with TitrationConfig fields (fbg_low, fbg_high, gamma,
        xi, alpha, horizon_days, beta, du_min, titration_interval_days,
        fbg_window)
    prior: object with means [p00, p10, p20] and log_sds [eta0, eta1, eta2]
    drug: preset name (glargine-100 | glargine-300 | degludec)
    drug_file: path to a JSON drug table to use instead of the presets
    start_dose: initial daily dose in U (default 0)
    scenarios: object mapping scenario names to ScenarioSpec field overrides
    """
    if path is None:
        return {}
    return json.loads(Path(path).read_text())


def _titration_config(cfg: dict) -> TitrationConfig:
    return TitrationConfig(**cfg.get("titration", {}))


def _prior(cfg: dict) -> PriorSpec:
    raw = cfg.get("prior", {})
    kwargs = {}
    if "means" in raw:
        kwargs["means"] = tuple(raw["means"])
    if "log_sds" in raw:
        kwargs["log_sds"] = tuple(raw["log_sds"])
    return PriorSpec(**kwargs)


def _drug(cfg: dict, name_override: str | None):
    if name_override:
        return get_drug(name_override)
    if "drug_file" in cfg:
        table = load_drug_file(cfg["drug_file"])
        name = cfg.get("drug")
        if name is None or name not in table:
            raise SystemExit(f"config drug_file given but drug {name!r} not in it")
        return table[name]
    return get_drug(cfg.get("drug", "degludec"))


def _scenario(name: str, cfg: dict, weeks: int | None):
    if name not in SCENARIO_PRESETS:
        raise SystemExit(f"unknown scenario {name!r}; choose from {sorted(SCENARIO_PRESETS)}")
    spec = SCENARIO_PRESETS[name]
    overrides = dict(cfg.get("scenarios", {}).get(name, {}))
    if weeks is not None:
        overrides["duration_weeks"] = weeks
    if "titration_interval_days" in overrides:
        overrides["titration_interval_days"] = tuple(overrides["titration_interval_days"])
    return dataclasses.replace(spec, **overrides) if overrides else spec


def cmd_gen_pop(args: argparse.Namespace) -> int:
    targets = PopulationTargets(n=args.n)
    if args.targets:
        raw = json.loads(Path(args.targets).read_text())
        targets = PopulationTargets(n=args.n, **raw)
    population = generate_population(targets, args.seed)
    save_population(population, args.out)
    print(f"wrote {len(population)} avatars to {args.out}")
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    config = _titration_config(cfg)
    prior = _prior(cfg)
    drug = _drug(cfg, args.drug)
    start_dose = float(cfg.get("start_dose", 0.0))
    population = load_population(args.population)

    names = sorted(SCENARIO_PRESETS) if args.scenario == "all" else [args.scenario]
    results = []
    for name in names:
        spec = _scenario(name, cfg, args.weeks)
        t0 = time.perf_counter()
        results.append(
            run_scenario(spec, population, config, args.seed, drug=drug, prior=prior,
                         start_dose=start_dose)
        )
        print(f"{name}: n={len(population)}, {spec.duration_weeks} weeks "
              f"({time.perf_counter() - t0:.1f}s)")
    files = export_results(results, args.out, format=args.format)
    print(f"wrote {len(files)} files under {args.out}")
    return 0


def cmd_metrics(args: argparse.Namespace) -> int:
    summary = summarize_csv_dir(args.runs)
    text = json.dumps(summary, sort_keys=True, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
        print(f"wrote {args.out}")
    else:
        print(text)
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    summary = json.loads(Path(args.summary).read_text())
    scenarios = summary["scenarios"]
    metrics = ["tir", "tbr", "gmi", "mean_fbg", "total_insulin"]
    for week_key in ("week8", "week26", "week52"):
        rows = [(name, s["checkpoints"].get(week_key)) for name, s in sorted(scenarios.items())]
        rows = [(n, c) for n, c in rows if c]
        if not rows:
            continue
        print(f"\n=== {week_key} ===")
        header = f"{'scenario':<12}" + "".join(f"{m:>16}" for m in metrics) + f"{'attain f/h/c %':>20}"
        print(header)
        for name, cp in rows:
            cells = "".join(
                f"{cp[m]['mean']:>10.1f}±{cp[m]['sd']:<5.1f}" for m in metrics
            )
            att = cp["attainment_pct"]
            print(f"{name:<12}{cells}{att['fasting']:>8.0f}/{att['hba1c']:.0f}/{att['cgm']:.0f}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="basalkit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-pop", help="generate a synthetic population")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=1234)
    p.add_argument("--targets", help="JSON file with hba1c_mean/hba1c_sd/fbg_mean/fbg_sd")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_pop)

    p = sub.add_parser("run", help="run a titration scenario")
    p.add_argument("--scenario", default="all",
                   help="SoC-3 | SoC-1 | RHC-3 | RHC-1 | RHC-1-acc | all")
    p.add_argument("--population", required=True, help="population file from gen-pop")
    p.add_argument("--seed", type=int, default=1234)
    p.add_argument("--weeks", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON config file (see docs)")
    p.add_argument("--drug", help="drug preset override")
    p.add_argument("--format", default="both", choices=["csv", "json", "both"])
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("metrics", help="recompute metrics from exported CSVs")
    p.add_argument("--runs", required=True, help="output directory of a previous run")
    p.add_argument("--out", help="write JSON here instead of stdout")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("report", help="print summary tables")
    p.add_argument("--summary", required=True, help="summary.json from a run")
    p.set_defaults(func=cmd_report)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
