"""Command-line interface: plan, evaluate, datagen, fit-labels, report."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import __version__


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coopmcts",
        description="Cooperative trajectory planning: tree search, mixture "
                    "heuristics, batch evaluation.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="log at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="run one search on a scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--strategy", choices=["baseline", "mdn"], default=None)
    p.add_argument("--mdn-weights", default=None)
    p.add_argument("--components", type=int, choices=[2, 3], default=None)
    p.add_argument("--integration", choices=["root", "all"], default=None)
    p.add_argument("--selection", choices=["on", "off"], default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="result JSON path (default stdout)")

    p = sub.add_parser("evaluate", help="run an experiment grid and report it")
    p.add_argument("--spec", required=True, help="experiment spec JSON")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("datagen", help="generate a training dataset")
    p.add_argument("--scenarios", required=True,
                   help="scenario file or directory of scenario JSON files")
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="dataset directory")
    p.add_argument("--iterations", type=int, default=None,
                   help="override per-step search iterations")
    p.add_argument("--balance", action="store_true",
                   help="downsample to uniform class counts before writing")

    p = sub.add_parser("fit-labels", help="fit mixture labels into a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("report", help="render figures from a result table")
    p.add_argument("--in", dest="in_dir", required=True,
                   help="directory containing success_table.json")
    p.add_argument("--out", required=True)
    return parser


def _cmd_plan(args) -> int:
    from dataclasses import replace

    from .mdn import load_weights
    from .planner import search
    from .scene import load_scenario

    scenario = load_scenario(args.scenario)
    cfg = scenario.config
    overrides = {}
    if args.iterations is not None:
        overrides["iterations"] = args.iterations
    if args.strategy is not None:
        overrides["strategy"] = args.strategy
    if args.components is not None:
        overrides["components"] = args.components
    if args.integration is not None:
        overrides["integration"] = args.integration
    if args.selection is not None:
        overrides["use_selection_bias"] = args.selection == "on"
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        cfg = replace(cfg, **overrides)
    weights = None
    if cfg.strategy == "mdn":
        if not args.mdn_weights:
            raise ValueError("--mdn-weights is required with --strategy mdn")
        weights = load_weights(args.mdn_weights)
    result = search(scenario.scene, cfg, weights=weights)
    doc = result.to_dict()
    doc["scenario"] = scenario.name
    payload = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(payload)
    else:
        sys.stdout.write(payload)
    return 0


def _cmd_evaluate(args) -> int:
    from .experiment import ExperimentSpec, run_experiment
    from .report import write_report

    spec = ExperimentSpec.from_json(args.spec)
    rows = run_experiment(spec)
    paths = write_report(rows, args.out)
    sys.stdout.write(json.dumps({"rows": len(rows), "outputs": paths},
                                indent=2, sort_keys=True) + "\n")
    return 0


def _scenario_paths(root: str) -> list[str]:
    if os.path.isfile(root):
        return [root]
    paths = sorted(os.path.join(root, f) for f in os.listdir(root)
                   if f.endswith(".json"))
    if not paths:
        raise FileNotFoundError(f"no scenario JSON files under {root!r}")
    return paths


def _cmd_datagen(args) -> int:
    from .datagen import (GenerationConfig, assign_record_ids, balance_classes,
                          generate_run, write_dataset)
    from .scene import load_scenario

    gen = GenerationConfig(iterations=args.iterations)
    records = []
    bounds = None
    for path in _scenario_paths(args.scenarios):
        scenario = load_scenario(path)
        if bounds is None:
            bounds = scenario.config.bounds
        elif bounds != scenario.config.bounds:
            logging.getLogger(__name__).warning(
                "scenario %s uses different action bounds than the first "
                "scenario; the manifest keeps the first", scenario.name)
        for run in range(args.runs):
            records.extend(generate_run(scenario, args.seed + run, gen))
    records = assign_record_ids(records)
    if args.balance:
        records = balance_classes(records)
    write_dataset(records, args.out, gen.feature,
                  config_echo={"runs": args.runs, "seed": args.seed,
                               "iterations": args.iterations,
                               "balanced": bool(args.balance)},
                  bounds=bounds)
    sys.stdout.write(json.dumps({"records": len(records),
                                 "dataset": args.out}) + "\n")
    return 0


def _cmd_fit_labels(args) -> int:
    from .config import ActionBounds
    from .datagen import fit_labels, read_dataset, write_dataset
    from .features import FeatureConfig, GridSpec

    records, manifest = read_dataset(args.dataset)
    gd, nd, bd = manifest["grid"], manifest["norms"], manifest["bounds"]
    feature = FeatureConfig(
        grid=GridSpec(n_lon=gd["n_lon"], n_lat=gd["n_lat"],
                      res_lon=gd["res_lon"], res_lat=gd["res_lat"],
                      lane_class_count=gd["lane_class_count"],
                      object_class_count=gd["object_class_count"]),
        v_norm=nd["v_norm"], a_norm=nd["a_norm"], slots=nd["slots"],
        history_len=nd["history_len"])
    kept = []
    dropped = 0
    for rec in records:
        fitted = fit_labels(rec, seed=args.seed)
        if fitted is None:
            dropped += 1
        else:
            kept.append(fitted)
    write_dataset(kept, args.dataset, feature, config_echo=manifest["config"],
                  bounds=ActionBounds(**bd))
    sys.stdout.write(json.dumps({"labeled": len(kept),
                                 "dropped": dropped}) + "\n")
    return 0


def _cmd_report(args) -> int:
    from .report import read_json, write_report

    table = os.path.join(args.in_dir, "success_table.json")
    rows = read_json(table)
    paths = write_report(rows, args.out)
    sys.stdout.write(json.dumps({"outputs": paths}, indent=2,
                                sort_keys=True) + "\n")
    return 0


_COMMANDS = {
    "plan": _cmd_plan,
    "evaluate": _cmd_evaluate,
    "datagen": _cmd_datagen,
    "fit-labels": _cmd_fit_labels,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except Exception as exc:  # CLI contract: machine-readable error JSON
        json.dump({"error": type(exc).__name__, "message": str(exc)},
                  sys.stderr)
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
