"""End-to-end runs: the PPAC sequential game, simplified baselines and comparisons.

The baselines keep only the behaviour the comparison needs: ER-adapted
repairs everything at the highest rates and books every operation as a
repair, QAR-adapted quarantines at the highest rate and holds nodes at the
lowest recovery rate. Both are evaluated slot by slot against the same
attacker λ trace as PPAC.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .epidemic import ControlTrajectory, Integrator, StateTrajectory, concat_controls, concat_states
from .errors import DomainError
from .game import SequentialRun, greedy_attacker, sequential_game_run, trace_hash
from .impact import ImpactBreakdown, impact_components, utility_series
from .metrics import RunRecord, metrics_summary
from .scenario import Scenario

log = logging.getLogger(__name__)

BASELINES = {
    "ER": ("ER-adapted", "hi", True),
    "QAR": ("QAR-adapted", "lo", False),
}
PPAC = "PPAC"
FLOAT = "%.10g"


@dataclass
class MethodRun:
    label: str
    record: RunRecord
    impact: ImpactBreakdown
    slot_impacts: list[ImpactBreakdown]
    attacker_trace: list[np.ndarray]
    warnings: list[str] = field(default_factory=list)
    game: SequentialRun | None = None

    def summary(self) -> dict:
        return {
            "metrics": metrics_summary(self.record),
            "impact": self.impact.to_dict(),
            "slot_impacts": [s.to_dict() for s in self.slot_impacts],
            "attacker_trace_sha256": trace_hash(self.attacker_trace),
            "warnings": list(self.warnings),
        }


def run_ppac(scenario: Scenario) -> MethodRun:
    game = sequential_game_run(scenario)
    record = RunRecord(PPAC, game.states, game.control, scenario.weights, scenario.U_n, scenario.slots)
    return MethodRun(PPAC, record, game.impact, [s.impact for s in game.slots], game.attacker_trace,
                     game.warnings, game)


def run_baseline(scenario: Scenario, kind: str, attacker_trace=None) -> MethodRun:
    """Fixed-rate baseline over every slot.

    Without ``attacker_trace`` the greedy attacker moves at each slot start
    against the baseline's own previous δ, as it would against PPAC.
    """
    if kind not in BASELINES:
        raise DomainError(f"unknown baseline {kind!r}; choose ER or QAR")
    label, gamma_end, reclassify = BASELINES[kind]
    params = scenario.attack_params
    gamma = getattr(params, f"gamma_{gamma_end}")
    if attacker_trace is not None and len(attacker_trace) != len(scenario.slots):
        raise DomainError("attacker trace needs one λ profile per slot")
    x = scenario.E0
    trace, controls, states, impacts = [], [], [], []
    prev_delta = None
    for s, (t0, t1) in enumerate(scenario.slots):
        if attacker_trace is not None:
            lam = np.asarray(attacker_trace[s], dtype=float)
        else:
            lam = greedy_attacker(x, params, defender_delta=prev_delta, costs=scenario.costs)
        grid = scenario.grid(t0, t1)
        ctl = ControlTrajectory.constant(grid, scenario.n, lam, params.delta_hi, gamma)
        traj, _ = Integrator(scenario.schedule, grid, params).run(x.as_array(), ctl)
        impacts.append(impact_components(traj, ctl, params, scenario.costs))
        trace.append(lam)
        controls.append(ctl)
        states.append(traj)
        prev_delta = params.delta_hi
        x = traj.final
    control, traj = concat_controls(controls), concat_states(states)
    record = RunRecord(label, traj, control, scenario.weights, scenario.U_n, scenario.slots, reclassify=reclassify)
    total = ImpactBreakdown(0.0, 0.0, 0.0)
    for imp in impacts:
        total = total + imp
    return MethodRun(label, record, total, impacts, trace)


@dataclass
class Comparison:
    scenario: Scenario
    runs: dict[str, MethodRun]

    @property
    def warnings(self) -> list[str]:
        return [f"{k}: {w}" for k, r in self.runs.items() for w in r.warnings]

    def metrics(self) -> dict:
        return {k: r.summary()["metrics"] for k, r in self.runs.items()}

    def report(self) -> dict:
        sc = self.scenario
        return {
            "scenario": sc.name,
            "seed": sc.seed,
            "n_nodes": sc.n,
            "U": sc.U,
            "U_n": sc.U_n,
            "slots": [list(s) for s in sc.slots],
            "methods": {k: r.summary() for k, r in self.runs.items()},
            "shared_attacker_trace": len({trace_hash(r.attacker_trace) for r in self.runs.values()}) == 1,
        }


def compare(scenario: Scenario) -> Comparison:
    ppac = run_ppac(scenario)
    runs = {PPAC: ppac}
    for kind in BASELINES:
        run = run_baseline(scenario, kind, ppac.attacker_trace)
        runs[run.label] = run
    return Comparison(scenario, runs)


# --- artifacts ------------------------------------------------------------------

def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([FLOAT % v if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def strategy_csv(control: ControlTrajectory) -> str:
    rows = ((float(control.grid[k]), i, float(control.lam[k, i]), float(control.delta[k, i]),
             float(control.gamma[k, i])) for k in range(control.steps) for i in range(control.n))
    return _csv(["time", "node", "lambda", "delta", "gamma"], rows)


def states_csv(traj: StateTrajectory) -> str:
    Q = traj.Q
    rows = ((float(traj.grid[k]), i, float(traj.x[k, 0, i]), float(traj.x[k, 1, i]), float(traj.x[k, 2, i]),
             float(Q[k, i])) for k in range(traj.grid.size) for i in range(traj.x.shape[2]))
    return _csv(["time", "node", "H", "M", "S", "Q"], rows)


def grades_csv(game: SequentialRun) -> str:
    rows = []
    for s in game.slots:
        rank = s.threat.rank()
        for i in range(s.threat.grades.size):
            rows.append((s.index, i, float(s.threat.grades[i]), int(rank[i]), float(s.recovery.grades[i])))
    return _csv(["slot", "node", "threat_grade", "threat_rank", "recovery_grade"], rows)


def comparison_files(cmp: Comparison) -> dict[str, str]:
    """File name → text for every artifact of a comparison."""
    labels = list(cmp.runs)
    slots = cmp.scenario.slots
    ppac = cmp.runs[PPAC]

    def per_slot(idx):
        return [(s, float(t0), float(t1), *(float(cmp.runs[m].record.counts[s][idx]) for m in labels))
                for s, (t0, t1) in enumerate(slots)]

    header = ["slot", "t_start", "t_end", *labels]
    grid = ppac.record.states.grid
    service = [utility_series(cmp.runs[m].record.states, cmp.scenario.weights) for m in labels]
    files = {
        "metrics.json": _json(cmp.metrics()),
        "report.json": _json(cmp.report()),
        "strategy.csv": strategy_csv(ppac.record.control),
        "states.csv": states_csv(ppac.record.states),
        "series_repairs.csv": _csv(header, per_slot(0)),
        "series_quarantine.csv": _csv(header, per_slot(1)),
        "series_service.csv": _csv(["time", *labels],
                                   ((float(t), *(float(s[k]) for s in service)) for k, t in enumerate(grid))),
        "grades.csv": grades_csv(ppac.game),
    }
    return files


def write_files(files: dict[str, str], out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, text in files.items():
        p = out / name
        p.write_text(text, encoding="utf-8")
        written.append(p)
    return written
