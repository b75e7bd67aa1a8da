"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure or
a run that finished with flagged warnings (for example a sweep that hit its
iteration cap).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import PRESETS, ScenarioConfig, load_scenario, resolve
from .control import forward_backward_sweep
from .epidemic import ControlTrajectory, simulate_markov
from .errors import ConfigError, ConfigurationError, DomainError, GenerationError, IntegrationError
from .game import attacker_atoms, build_payoff_matrix, defender_atoms, fictitious_play, pure_maximin
from .grading import GradeInputs, recovery_grade, threat_grade
from .harness import (_csv, _json, compare, comparison_files, grades_csv, run_baseline, run_ppac, states_csv,
                      strategy_csv, write_files)
from .topology import write_edge_list

log = logging.getLogger("aptrepair")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(suppress: bool = False) -> argparse.ArgumentParser:
    # subcommand copies must not overwrite flags given before the subcommand
    p = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS if suppress else None)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--config", metavar="PATH", help="scenario JSON file")
    src.add_argument("--preset", metavar="NAME", choices=sorted(PRESETS), help="built-in scenario")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--grid-step", type=float, metavar="FLOAT", help="solver grid step")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="aptrepair", description="APT repair strategies on time-varying networks",
                     parents=[_common()])
    common = _common(suppress=True)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def add(name, help_):
        return sub.add_parser(name, help=help_, parents=[common], description=help_)

    add("generate", "write the scenario's topology schedule")
    g = add("grade", "threat and recovery grade lists")
    g.add_argument("--t", type=float, default=0.0, help="grading time")
    g.add_argument("--quarantined", help="comma-separated node indices (default: top-j threat nodes)")
    add("solve", "one forward-backward sweep over the whole horizon")
    m = add("game", "payoff matrix and equilibria for one slot")
    m.add_argument("--slot", type=int, default=0)
    m.add_argument("--iterations", type=int, default=100000, help="fictitious-play iterations")
    add("run", "sequential attacker/defender game over every slot")
    b = add("baseline", "ER-adapted or QAR-adapted baseline")
    b.add_argument("--kind", choices=["ER", "QAR"], required=True)
    add("compare", "PPAC against both baselines with metrics and series")
    s = add("simulate", "Monte-Carlo run of the underlying Markov chain")
    s.add_argument("--runs", type=int, default=2000)
    s.add_argument("--routing", choices=["ode", "split"], default="ode")
    return parser


def _scenario(args):
    if args.config:
        cfg = load_scenario(args.config)
    else:
        cfg = ScenarioConfig.preset(args.preset or "setting1")
    cfg = cfg.with_overrides(seed=args.seed, grid_step=args.grid_step)
    out = Path(args.out or cfg.data.get("output_dir", "out"))
    return cfg, resolve(cfg), out


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_generate(args, cfg, sc, out):
    files = {"schedule.json": _json(sc.schedule.to_dict()), "config.json": cfg.dumps()}
    for k, seg in enumerate(sc.schedule.segments):
        files[f"edges_{k}.txt"] = write_edge_list(seg.adjacency)
    write_files(files, out)
    _emit({"segments": sc.schedule.intervals, "distinct": sc.schedule.n_distinct(), "out": str(out)})
    return []


def cmd_grade(args, cfg, sc, out):
    gs = sc.grading
    inputs = GradeInputs(args.t, sc.E0, sc.schedule, sc.weights, sc.U_n, t_w=gs.t_w, rho_phi=gs.rho_phi,
                         Z_phi=gs.Z_phi, max_backtracks=gs.max_backtracks, worst_case=gs.worst_case,
                         utility_mode=gs.utility_mode)
    trg = threat_grade(inputs, sc.params)
    if args.quarantined:
        try:
            quarantined = [int(v) for v in args.quarantined.split(",") if v.strip()]
        except ValueError as exc:
            raise UsageError(f"--quarantined expects integers: {exc}") from exc
    else:
        quarantined = sorted(trg.order[:trg.j].tolist())
    rrg = recovery_grade(inputs, quarantined, sc.params)
    write_files({"grades.csv": trg.to_csv(), "recovery_grades.csv": rrg.to_csv()}, out)
    _emit({"j": trg.j, "top_j_sum": float(trg.grades[trg.order[:trg.j]].sum()),
           "top_j": trg.order[:trg.j].tolist(), "recovery_sum": float(rrg.grades.sum()),
           "max_iterations": int(trg.iterations.max())})
    return []


def cmd_solve(args, cfg, sc, out):
    problem = sc.problem()
    result = forward_backward_sweep(problem, None, sc.sweep)
    write_files({"strategy.csv": strategy_csv(result.control), "states.csv": states_csv(result.states),
                 "summary.json": _json(result.summary())}, out)
    _emit(result.summary())
    return [result.warning] if result.warning else []


def cmd_game(args, cfg, sc, out):
    if not 0 <= args.slot < len(sc.slots):
        raise UsageError(f"--slot must lie in [0, {len(sc.slots) - 1}]")
    if args.iterations < 1:
        raise UsageError("--iterations must be >= 1")
    t0, t1 = sc.slots[args.slot]
    entry = sc.E0
    if t0 > 0:
        # reach the slot under the lowest rates
        pre = sc.problem(0.0, t0)
        entry = pre.forward(ControlTrajectory.at_bounds(pre.grid, pre.params, "lo")).final
    problem = sc.problem(t0, t1, E0=entry)
    matrix = build_payoff_matrix(problem, attacker_atoms(sc.params, sc.schedule.segments[args.slot].adjacency),
                                 defender_atoms(sc.params))
    row, col, value, saddle = pure_maximin(matrix)
    fp = fictitious_play(matrix, args.iterations)
    report = {"slot": [t0, t1], "matrix": matrix.to_dict(),
              "maximin": {"row": row, "col": col, "value": value, "saddle": saddle},
              "fictitious_play": fp.to_dict()}
    write_files({"game.json": _json(report)}, out)
    _emit(report)
    return []


def _slot_rows(run):
    for s in run.game.slots:
        imp = s.impact
        yield (s.index, float(s.t0), float(s.t1), imp.L, imp.E, imp.C, imp.I, s.sweep.iterations,
               int(s.sweep.converged))


def cmd_run(args, cfg, sc, out):
    run = run_ppac(sc)
    summary = run.summary()
    write_files({"strategy.csv": strategy_csv(run.record.control), "states.csv": states_csv(run.record.states),
                 "grades.csv": grades_csv(run.game),
                 "slots.csv": _csv(["slot", "t_start", "t_end", "L", "E", "C", "I", "iterations", "converged"],
                                   _slot_rows(run)),
                 "summary.json": _json(summary)}, out)
    _emit({"impact": summary["impact"], "metrics": summary["metrics"], "warnings": summary["warnings"]})
    return run.warnings


def cmd_baseline(args, cfg, sc, out):
    run = run_baseline(sc, args.kind)
    summary = run.summary()
    write_files({"strategy.csv": strategy_csv(run.record.control), "states.csv": states_csv(run.record.states),
                 "summary.json": _json(summary)}, out)
    _emit({"method": run.label, "impact": summary["impact"], "metrics": summary["metrics"]})
    return []


def cmd_compare(args, cfg, sc, out):
    cmp = compare(sc)
    write_files(comparison_files(cmp), out)
    _emit(cmp.metrics())
    return cmp.warnings


def cmd_simulate(args, cfg, sc, out):
    if args.runs < 1:
        raise UsageError("--runs must be >= 1")
    grid = sc.grid()
    control = ControlTrajectory.at_bounds(grid, sc.params, "lo")
    traj = simulate_markov(sc.attack_params, control, sc.schedule, sc.E0, args.runs, sc.seed, routing=args.routing)
    write_files({"markov_states.csv": states_csv(traj)}, out)
    final = traj.x[-1]
    _emit({"runs": args.runs, "routing": args.routing,
           "final_mean": {"H": float(final[0].mean()), "M": float(final[1].mean()), "S": float(final[2].mean())}})
    return []


COMMANDS = {"generate": cmd_generate, "grade": cmd_grade, "solve": cmd_solve, "game": cmd_game, "run": cmd_run,
            "baseline": cmd_baseline, "compare": cmd_compare, "simulate": cmd_simulate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    np.seterr(all="ignore")
    try:
        cfg, sc, out = _scenario(args)
        warnings = COMMANDS[args.command](args, cfg, sc, out)
    except (ConfigError, UsageError, ConfigurationError) as exc:
        print(f"aptrepair: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DomainError, IntegrationError, GenerationError) as exc:
        print(f"aptrepair: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for w in warnings:
        print(f"aptrepair: warning: {w}", file=sys.stderr)
    return EXIT_RUNTIME if warnings else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
