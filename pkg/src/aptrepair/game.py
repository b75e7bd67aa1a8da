"""Zero-sum attacker/defender layer.

Payoff entries are defender losses (total impact I). The defender's gain is
``W_D * loss`` with W_D = −1, the attacker's is ``W_A * loss`` with W_A = +1.
All indices are 0-based.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np

from .control import ControlProblem, SweepResult, forward_backward_sweep
from .epidemic import (ControlTrajectory, ExpectedState, NodeParams, StateTrajectory, concat_controls,
                       concat_states)
from .errors import DomainError
from .grading import GradeInputs, GradeList, PeriodValues, modulated_bounds, recovery_grade, threat_grade
from .impact import CostFunctions, ImpactBreakdown

log = logging.getLogger(__name__)

W_A = 1.0
W_D = -1.0


@dataclass(frozen=True)
class StrategyAtom:
    """Attacker atoms carry ``lam``; defender atoms carry ``delta`` and ``gamma``."""

    kind: str
    label: str
    lam: np.ndarray | None = None
    delta: np.ndarray | None = None
    gamma: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == "attacker" and self.lam is None:
            raise DomainError("attacker atom needs a lambda profile")
        if self.kind == "defender" and (self.delta is None or self.gamma is None):
            raise DomainError("defender atom needs delta and gamma profiles")
        if self.kind not in ("attacker", "defender"):
            raise DomainError(f"unknown atom kind {self.kind!r}")


def attacker_atoms(params: NodeParams, adjacency) -> list[StrategyAtom]:
    """Bang-bang λ templates: all high, all low, and the top-k degree nodes high."""
    n = params.n
    deg = np.asarray(adjacency).sum(axis=1)
    by_degree = np.lexsort((np.arange(n), -deg))
    atoms = [StrategyAtom("attacker", "uniform-high", lam=params.lam_hi.copy()),
             StrategyAtom("attacker", "uniform-low", lam=params.lam_lo.copy())]
    for k in sorted({max(1, n // 4), max(1, n // 2)}):
        lam = params.lam_lo.copy()
        lam[by_degree[:k]] = params.lam_hi[by_degree[:k]]
        atoms.append(StrategyAtom("attacker", f"top{k}-degree-high", lam=lam))
    return atoms


def defender_atoms(params: NodeParams) -> list[StrategyAtom]:
    out = []
    for dn in ("lo", "hi"):
        for gn in ("lo", "hi"):
            out.append(StrategyAtom("defender", f"delta-{dn}/gamma-{gn}",
                                    delta=getattr(params, f"delta_{dn}").copy(),
                                    gamma=getattr(params, f"gamma_{gn}").copy()))
    return out


@dataclass
class PayoffMatrix:
    loss: np.ndarray
    rows: list[str] = field(default_factory=list)
    cols: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.loss = np.atleast_2d(np.asarray(self.loss, dtype=float))
        if self.loss.ndim != 2 or 0 in self.loss.shape:
            raise DomainError("payoff matrix must be a non-empty 2-D array")
        if not np.all(np.isfinite(self.loss)):
            raise DomainError("payoff entries must be finite")

    @property
    def gain(self) -> np.ndarray:
        """Defender-gain orientation."""
        return W_D * self.loss

    def to_dict(self) -> dict:
        return {"loss": self.loss.tolist(), "rows": list(self.rows), "cols": list(self.cols)}


def build_payoff_matrix(problem: ControlProblem, attackers, defenders) -> PayoffMatrix:
    """Impact of every (defender atom, attacker atom) pair over the problem window."""
    if not attackers or not defenders:
        raise DomainError("need at least one atom on each side")
    loss = np.empty((len(defenders), len(attackers)))
    for i, d in enumerate(defenders):
        for j, a in enumerate(attackers):
            ctl = ControlTrajectory.constant(problem.grid, problem.n, a.lam, d.delta, d.gamma)
            loss[i, j] = problem.impact(ctl).I
    return PayoffMatrix(loss, [d.label for d in defenders], [a.label for a in attackers])


def _gain(matrix) -> np.ndarray:
    if isinstance(matrix, PayoffMatrix):
        return matrix.gain
    g = np.atleast_2d(np.asarray(matrix, dtype=float))
    if g.ndim != 2 or 0 in g.shape:
        raise DomainError("matrix must be non-empty and 2-D")
    return g


def pure_maximin(matrix):
    """(row*, col*, value, is_saddle) on the row player's gain.

    Raw arrays are read as gains directly; a :class:`PayoffMatrix` is
    converted to defender gains first.
    """
    g = _gain(matrix)
    row_min = g.min(axis=1)
    row = int(np.argmax(row_min))
    col = int(np.argmin(g[row]))
    value = float(row_min[row])
    minimax = float(g.max(axis=0).min())
    return row, col, value, bool(value == minimax)


def minimax_value(matrix) -> float:
    return float(_gain(matrix).max(axis=0).min())


@dataclass
class FictitiousPlayResult:
    row_mix: np.ndarray
    col_mix: np.ndarray
    value: float
    lower: float
    upper: float

    def to_dict(self) -> dict:
        return {"row_mix": self.row_mix.tolist(), "col_mix": self.col_mix.tolist(), "value": self.value,
                "lower": self.lower, "upper": self.upper}


def fictitious_play(matrix, iterations: int) -> FictitiousPlayResult:
    """Simultaneous fictitious play on the row player's gain matrix.

    Both players best-respond to the opponent's empirical mix; ties go to
    the lowest index. The value estimate is the midpoint of the lower and
    upper bounds implied by the empirical mixes.
    """
    if iterations < 1:
        raise DomainError("iterations must be >= 1")
    g = _gain(matrix)
    n, m = g.shape
    rows = g.tolist()
    cols = g.T.tolist()
    row_acc = [0.0] * n  # payoff of each row against the column history
    col_acc = [0.0] * m  # payoff of each column against the row history
    row_count = [0] * n
    col_count = [0] * m
    r, c = 0, 0
    for _ in range(iterations):
        row_count[r] += 1
        col_count[c] += 1
        col_r = cols[c]
        for i in range(n):
            row_acc[i] += col_r[i]
        row_r = rows[r]
        for j in range(m):
            col_acc[j] += row_r[j]
        best = row_acc[0]
        r = 0
        for i in range(1, n):
            if row_acc[i] > best:
                best, r = row_acc[i], i
        worst = col_acc[0]
        c = 0
        for j in range(1, m):
            if col_acc[j] < worst:
                worst, c = col_acc[j], j
    upper = best / iterations
    lower = worst / iterations
    return FictitiousPlayResult(np.array(row_count) / iterations, np.array(col_count) / iterations,
                                0.5 * (lower + upper), lower, upper)


def attack_gain(state: ExpectedState, params: NodeParams, costs: CostFunctions, defender_delta) -> np.ndarray:
    """∂(dI/dt)/∂λ_i: raising λ_i moves mild mass to severe at rate λ_i M_i."""
    return state.M * (params.a2 + costs.quarantine_cost(np.asarray(defender_delta, dtype=float)) - params.a1)


def greedy_attacker(state: ExpectedState, params: NodeParams, snapshot=None, defender_delta=None,
                    costs: CostFunctions | None = None, lam_hi=None) -> np.ndarray:
    """Per-node λ ∈ {λ_lo, λ_hi} maximising the instantaneous impact rate.

    ``defender_delta`` is the defender's previous-slot δ (defaults to δ_lo).
    ``snapshot`` is accepted for interface symmetry; the choice depends on
    the state and costs only.
    """
    costs = costs or CostFunctions()
    delta = params.delta_lo if defender_delta is None else defender_delta
    hi = params.lam_hi if lam_hi is None else np.asarray(lam_hi, dtype=float)
    return np.where(attack_gain(state, params, costs, delta) > 0, hi, params.lam_lo)


def trace_hash(lams) -> str:
    h = hashlib.sha256()
    for lam in lams:
        h.update(np.ascontiguousarray(lam, dtype="<f8").tobytes())
    return h.hexdigest()


# --- sequential game ----------------------------------------------------------

@dataclass
class SlotRecord:
    index: int
    t0: float
    t1: float
    attacker_lambda: np.ndarray
    threat: GradeList
    recovery: GradeList
    quarantined: np.ndarray
    sweep: SweepResult

    @property
    def entry(self) -> ExpectedState:
        return self.sweep.states.at(0)

    @property
    def exit(self) -> ExpectedState:
        return self.sweep.states.final

    @property
    def impact(self) -> ImpactBreakdown:
        return self.sweep.impact


@dataclass
class SequentialRun:
    slots: list[SlotRecord]

    @property
    def control(self) -> ControlTrajectory:
        return concat_controls([s.sweep.control for s in self.slots])

    @property
    def states(self) -> StateTrajectory:
        return concat_states([s.sweep.states for s in self.slots])

    @property
    def impact(self) -> ImpactBreakdown:
        total = ImpactBreakdown(0.0, 0.0, 0.0)
        for s in self.slots:
            total = total + s.impact
        return total

    @property
    def attacker_trace(self) -> list[np.ndarray]:
        return [s.attacker_lambda for s in self.slots]

    @property
    def warnings(self) -> list[str]:
        return [f"slot {s.index}: {s.sweep.warning}" for s in self.slots if s.sweep.warning]


def _time_average(values: np.ndarray, grid: np.ndarray) -> np.ndarray:
    h = np.diff(grid)
    return (h[:, None] * values).sum(axis=0) / h.sum()


def _seeded_guess(lo, hi, grades) -> np.ndarray:
    g = np.asarray(grades, dtype=float)
    top = g.max()
    frac = g / top if top > 0 else np.zeros_like(g)
    return lo + (hi - lo) * frac


def sequential_game_run(scenario) -> SequentialRun:
    """Attacker moves first in every slot, then the defender solves the slot.

    Per slot: threat grading caps λ_hi and γ is capped by recovery grading of
    the currently quarantined nodes; the greedy attacker fixes λ from the
    entry state and the defender's previous δ; a sweep restricted to the slot
    picks (δ, γ), warm-started from the previous slot's final control.
    """
    base = scenario.attack_params
    cache = PeriodValues(scenario.schedule, base, scenario.weights, utility_mode=scenario.grading.utility_mode)
    gs = scenario.grading
    entry = scenario.E0
    prev_delta = None
    prev_last = None
    records = []
    for s, (t0, t1) in enumerate(scenario.slots):
        inputs = GradeInputs(t0, entry, scenario.schedule, scenario.weights, scenario.U_n, k_start=s,
                             t_w=gs.t_w, rho_phi=gs.rho_phi, Z_phi=gs.Z_phi,
                             max_backtracks=gs.max_backtracks, worst_case=gs.worst_case,
                             utility_mode=gs.utility_mode)
        trg = threat_grade(inputs, base, cache)
        lam_cap = modulated_bounds(base.lam_lo, base.lam_hi, trg.grades)
        lam = greedy_attacker(entry, base, defender_delta=prev_delta, costs=scenario.costs, lam_hi=lam_cap)

        quarantined = np.flatnonzero(entry.Q > gs.quarantine_threshold)
        if quarantined.size == 0:
            quarantined = np.sort(trg.order[:trg.j])
        rrg = recovery_grade(inputs, quarantined, base, cache)
        gamma_cap = modulated_bounds(base.gamma_lo, base.gamma_hi, rrg.grades)
        params = base.with_(gamma_hi=gamma_cap)

        problem = scenario.problem(t0, t1, E0=entry, params=params, fixed_lambda=lam)
        K = problem.grid.size - 1
        if prev_last is None:
            delta0 = _seeded_guess(base.delta_lo, base.delta_hi, trg.grades)
            gamma0 = _seeded_guess(base.gamma_lo, gamma_cap, rrg.grades)
        else:
            delta0, gamma0 = prev_last
        init = ControlTrajectory.constant(problem.grid, scenario.n, lam, delta0, gamma0)
        result = forward_backward_sweep(problem, init, scenario.sweep)
        records.append(SlotRecord(s, t0, t1, lam, trg, rrg, quarantined, result))

        ctl = result.control
        prev_delta = _time_average(ctl.delta, ctl.grid)
        prev_last = (ctl.delta[K - 1].copy(), ctl.gamma[K - 1].copy())
        entry = result.states.final
    return SequentialRun(records)
