"""Command-line front end for community energy runs.

Subcommands: ``run`` (distributed negotiation), ``solve`` (centralized
one-shot), ``baseline`` (every building isolated), ``compare`` (cost
deltas between two result directories) and ``validate`` (scenario lint).

Exit codes: 0 success, 1 scenario validation error, 2 infeasible problem,
3 finished without reaching the convergence thresholds (results are still
written).  A ``--scenario`` path that does not exist on disk is looked up
among the bundled scenarios, so ``--scenario community4.json`` always
works.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .agent import AlgoParams, InfeasibleUpdateError
from .blocks import BlockInfeasibleError
from .central import CentralInfeasibleError
from .network import LossModel
from .orchestrator import DEFAULT_FLAG_TOL, run_baseline, run_centralized, run_distributed
from .results_io import read_meta, read_summary, write_results
from .scenario import ScenarioError, bundled_scenario_path, load_scenario

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_INFEASIBLE = 2
EXIT_NOT_CONVERGED = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="peergrid",
        description="Cooperative building-community energy scheduling via peer-to-peer trading.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, with_out=True):
        p.add_argument("--scenario", required=True, help="scenario JSON (falls back to bundled data)")
        if with_out:
            p.add_argument("--out", help="directory for result CSVs")

    p_run = sub.add_parser("run", help="distributed negotiation over the lossy network")
    add_common(p_run)
    p_run.add_argument("--seed", type=int, help="override the loss-model RNG seed")
    p_run.add_argument("--iterations", type=int, help="override the iteration cap")
    p_run.add_argument("--loss-prob", type=float, help="override the global link failure probability")
    p_run.add_argument("--penalty", type=float, help="override the consensus penalty weight")
    p_run.add_argument("--tol", type=float,
                       help="stop when both residuals fall below this (also the convergence flag level)")

    p_solve = sub.add_parser("solve", help="centralized social-cost optimum (oracle)")
    add_common(p_solve)

    p_base = sub.add_parser("baseline", help="isolated buildings, trading disabled")
    add_common(p_base)

    p_cmp = sub.add_parser("compare", help="cost-reduction table between two result directories")
    p_cmp.add_argument("before", help="result directory of the reference run (e.g. baseline)")
    p_cmp.add_argument("after", help="result directory of the cooperative run")

    p_val = sub.add_parser("validate", help="scenario lint: report every validation problem")
    add_common(p_val, with_out=False)
    return parser


def _resolve_scenario(path_arg: str) -> Path:
    path = Path(path_arg)
    if path.exists():
        return path
    bundled = bundled_scenario_path(path.stem)
    if bundled.exists():
        return bundled
    raise FileNotFoundError(f"scenario file not found: {path_arg}")


def _apply_overrides(scenario, args):
    algo, loss = scenario.algo, scenario.loss
    algo_fields = {}
    if getattr(args, "iterations", None) is not None:
        algo_fields["max_iterations"] = args.iterations
    if getattr(args, "penalty", None) is not None:
        algo_fields["penalty"] = args.penalty
    if getattr(args, "tol", None) is not None:
        algo_fields["residual_tol"] = args.tol
    if algo_fields:
        algo = dataclasses.replace(algo, **algo_fields)
    loss_fields = {}
    if getattr(args, "seed", None) is not None:
        loss_fields["seed"] = args.seed
    if getattr(args, "loss_prob", None) is not None:
        loss_fields["default_failure_prob"] = args.loss_prob
        loss_fields["per_link"] = {}
    if loss_fields:
        loss = dataclasses.replace(loss, **loss_fields)
    return algo, loss


def _emit(result, scenario, out_dir):
    if out_dir:
        write_results(result, scenario.topology, out_dir)
    print(f"method={result.method} social_cost={result.social_cost:.6f} "
          f"iterations={result.iterations} converged={result.converged}")


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "compare":
            return _cmd_compare(args)
        scenario_path = _resolve_scenario(args.scenario)
        scenario = load_scenario(scenario_path)
        if args.command == "validate":
            print(f"scenario {scenario_path} is valid: "
                  f"{len(scenario.buildings)} buildings, "
                  f"{scenario.topology.n_edges} links, horizon {scenario.profile.horizon}")
            return EXIT_OK
        if args.command == "run":
            algo, loss = _apply_overrides(scenario, args)
            flag_tol = args.tol if args.tol is not None else DEFAULT_FLAG_TOL
            result = run_distributed(
                list(scenario.buildings), scenario.profile, scenario.topology,
                algo, loss, flag_tol=flag_tol,
            )
            _emit(result, scenario, args.out)
            if not result.converged:
                print("warning: residuals above the convergence threshold at the final iteration",
                      file=sys.stderr)
                return EXIT_NOT_CONVERGED
            return EXIT_OK
        if args.command == "solve":
            result = run_centralized(list(scenario.buildings), scenario.profile, scenario.topology)
            _emit(result, scenario, args.out)
            return EXIT_OK
        if args.command == "baseline":
            result = run_baseline(list(scenario.buildings), scenario.profile, scenario.topology)
            _emit(result, scenario, args.out)
            return EXIT_OK
        raise AssertionError(f"unhandled command {args.command!r}")
    except ScenarioError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_VALIDATION
    except (FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (BlockInfeasibleError, CentralInfeasibleError, InfeasibleUpdateError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


def _cmd_compare(args) -> int:
    before = read_summary(args.before)
    after = read_summary(args.after)
    meta_b, meta_a = read_meta(args.before), read_meta(args.after)
    ids = [bid for bid in before if bid != "TOTAL"]
    missing = [bid for bid in ids if bid not in after]
    if missing or set(ids) != {b for b in after if b != "TOTAL"}:
        print(f"error: result directories cover different buildings", file=sys.stderr)
        return EXIT_VALIDATION
    print(f"before: method={meta_b['method']} social={meta_b['social_cost']:.4f}")
    print(f"after:  method={meta_a['method']} social={meta_a['social_cost']:.4f}")
    print()
    print(f"{'building':<10} {'cost before':>12} {'cost after':>12} {'reduction':>12}")
    for bid in ids + ["TOTAL"]:
        b_cost = before[bid]["total_cost"]
        a_cost = after[bid]["total_cost"]
        print(f"{bid:<10} {b_cost:>12.4f} {a_cost:>12.4f} {b_cost - a_cost:>12.4f}")
    return EXIT_OK


def console_main() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    raise SystemExit(main())
