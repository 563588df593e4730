"""Command-line interface.

Subcommands:
  run         batch experiment from a config file and/or flags
  milestones  window per-run CSVs into optimal-plan / success percentages
  replay      re-execute a recorded trace and check bit-identical state
  oracle      Monte-Carlo ground-truth rates and optimal compositions
  plan        print the expected-utility-maximal plan for n blocks
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

from . import experiments, symbols
from .experiments import (
    ExperimentConfig,
    compute_milestones,
    config_from_json,
    milestones_csv,
    oracle_for_run,
    read_run_csv,
    run_experiment,
)
from .planner import CostFunction, plan
from .physics.world import replay_trace
from .transitions import ActionContext, TransitionModel, init_optimistic


def _build_config(args) -> ExperimentConfig:
    if args.config:
        with open(args.config) as fh:
            cfg = config_from_json(fh.read())
    else:
        cfg = ExperimentConfig()
    overrides = {}
    if args.agents:
        overrides["agents"] = tuple(args.agents.split(","))
    for name in ("runs", "episodes", "particles", "workers"):
        val = getattr(args, name)
        if val is not None:
            key = {"episodes": "episodes_per_run",
                   "particles": "n_particles"}.get(name, name)
            overrides[key] = val
    if args.seed is not None:
        base = args.seed
        overrides["seeds"] = tuple(
            base + 7 * i for i in range(overrides.get("runs", cfg.runs)))
    if args.noise is not None:
        overrides["noise_scale"] = args.noise
    if args.variant:
        overrides["variant"] = args.variant
    if args.out:
        overrides["out_dir"] = args.out
    from dataclasses import replace

    return replace(cfg, **overrides)


def cmd_run(args) -> int:
    cfg = _build_config(args)
    out = run_experiment(cfg, record_trace=args.trace)
    print(f"config: {os.path.join(cfg.out_dir, 'config.json')}")
    for agent, paths in out["per_run"].items():
        print(f"{agent}: {len(paths)} run files")
    for agent, agg in out["aggregate"].items():
        rows = read_run_csv(agg)
        final = rows[-1]
        print(f"{agent}: aggregate {agg} "
              f"(final mean utility {float(final['mean_utility']):.1f})")
    return 0


def cmd_milestones(args) -> int:
    rows = []
    for path in args.run_csv:
        rows.extend(read_run_csv(path))
    report = compute_milestones(rows, n_windows=args.windows)
    milestones_csv(report, args.out)
    print(f"wrote {args.out}")
    for start, end, opt, suc in report.windows:
        print(f"episodes {start:4d}-{end:4d}: optimal plans {opt:6.2f}%  "
              f"successful actions {suc:6.2f}%")
    return 0


def cmd_replay(args) -> int:
    ok = replay_trace(args.trace)
    print("replay bit-identical: " + ("yes" if ok else "NO"))
    return 0 if ok else 1


def cmd_oracle(args) -> int:
    cfg = ExperimentConfig(
        variant=args.variant, noise_scale=args.noise, out_dir=args.out)
    oracle = oracle_for_run(cfg, args.seed)
    print("ground-truth success rates:")
    for (kind, load), p in sorted(oracle["rates"].items()):
        print(f"  {kind:7s} load={load}: {p:.3f}")
    print("optimal compositions:",
          sorted(oracle["optimal"]), f"(utility {oracle['best_utility']:.2f})")
    return 0


def _model_from_csv(path) -> TransitionModel:
    counts = []
    with open(path) as fh:
        for row in csv.DictReader(fh):
            counts.append((
                ActionContext(row["action_type"], int(row["load"])),
                float(row["successes"]), float(row["attempts"])))
    return TransitionModel(m_known=5, counts=tuple(counts))


def cmd_plan(args) -> int:
    domain = symbols.make_domain(args.blocks)
    model = _model_from_csv(args.tmodel) if args.tmodel else init_optimistic()
    best = plan(domain, domain.init, domain.goal, model, CostFunction())
    print("plan:")
    for _, action in best.steps:
        print(f"  {action.name}")
    print(f"trip composition: {best.composition}")
    print(f"expected utility: {best.expected_utility:.2f}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="stackpush",
        description="stack-and-push task-and-motion planning lab")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a batch experiment")
    p_run.add_argument("--config", help="JSON config file")
    p_run.add_argument("--agents", help="comma-separated agent kinds")
    p_run.add_argument("--runs", type=int)
    p_run.add_argument("--episodes", type=int)
    p_run.add_argument("--particles", type=int)
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--noise", type=float)
    p_run.add_argument("--variant", choices=experiments.VARIANTS)
    p_run.add_argument("--out")
    p_run.add_argument("--workers", type=int)
    p_run.add_argument("--trace", action="store_true",
                       help="record a replayable trace of run 0, episode 0")
    p_run.set_defaults(fn=cmd_run)

    p_mile = sub.add_parser("milestones", help="windowed learning milestones")
    p_mile.add_argument("run_csv", nargs="+", help="per-run CSV files")
    p_mile.add_argument("--windows", type=int, default=10)
    p_mile.add_argument("--out", default="milestones.csv")
    p_mile.set_defaults(fn=cmd_milestones)

    p_replay = sub.add_parser("replay", help="verify a recorded trace")
    p_replay.add_argument("--trace", required=True)
    p_replay.set_defaults(fn=cmd_replay)

    p_oracle = sub.add_parser("oracle", help="ground-truth rates and optima")
    p_oracle.add_argument("--seed", type=int, default=1000)
    p_oracle.add_argument("--variant", choices=experiments.VARIANTS,
                          default="same_size")
    p_oracle.add_argument("--noise", type=float, default=1.0)
    p_oracle.add_argument("--out", default="results")
    p_oracle.set_defaults(fn=cmd_oracle)

    p_plan = sub.add_parser("plan", help="print the chosen plan")
    p_plan.add_argument("--blocks", type=int, default=8)
    p_plan.add_argument("--tmodel", help="counts CSV (action_type,load,...)")
    p_plan.set_defaults(fn=cmd_plan)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
