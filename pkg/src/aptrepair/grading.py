"""Threat-rate and recovery-rate grading by backtracking-forward sweeps.

Each node starts from the compromise pressure of its one-hop neighbourhood
and then walks the remaining topology periods. At every period the effect of
removing the node (threat grading) or re-admitting it (recovery grading) on
the spectral radius and on network utility is compared with the previous
period; when the comparison fails the sweep steps back one period and the
differences accumulate into correction terms that feed the node's score.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .epidemic import ExpectedState, NodeParams, pressures
from .errors import ConfigurationError, DomainError
from .topology import (GraphSnapshot, TopologySchedule, betweenness, k_shell, network_utility,
                       spectral_radius, threshold_matrix)


@dataclass
class GradeInputs:
    """Inputs shared by both grading passes.

    ``k_start`` is the 0-based segment index the sweep starts from; when
    omitted it is the segment containing ``t``. ``weights`` are the service
    weights u_i (summing to ``U``). ``I_bar`` defaults to ``U / N``.
    """

    t: float
    state: ExpectedState
    schedule: TopologySchedule
    weights: np.ndarray
    U_n: float
    I_bar: float | None = None
    k_start: int | None = None
    t_w: float = 1.0
    rho_phi: float = 0.5
    Z_phi: float = 0.5
    max_backtracks: int | None = None
    worst_case: bool = True
    utility_mode: str = "lcc"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        n = self.schedule.n_nodes
        if self.weights.shape != (n,) or self.state.n != n:
            raise DomainError("state, weights and schedule disagree on node count")
        if not 0.0 < self.U_n < self.U:
            raise DomainError(f"need 0 < U_n < U, got U_n={self.U_n}, U={self.U}")
        if self.t_w <= 0:
            raise DomainError("t_w must be positive")
        if self.rho_phi < 0 or self.Z_phi < 0 or self.rho_phi + self.Z_phi <= 0:
            raise DomainError("rho_phi and Z_phi must be non-negative with a positive sum")
        if self.I_bar is None:
            self.I_bar = self.U / n
        if self.I_bar <= 0:
            raise DomainError("I_bar must be positive")
        if self.k_start is None:
            self.k_start = self.schedule.segment_index(self.t)
        if not 0 <= self.k_start < len(self.schedule):
            raise DomainError(f"k_start={self.k_start} outside the schedule")
        if self.max_backtracks is not None and self.max_backtracks < 0:
            raise DomainError("max_backtracks must be >= 0")

    @property
    def U(self) -> float:
        return float(self.weights.sum())

    @property
    def n(self) -> int:
        return self.schedule.n_nodes


@dataclass
class GradeList:
    kind: str
    grades: np.ndarray
    scores: np.ndarray
    order: np.ndarray
    candidates: np.ndarray
    j: int | None
    iterations: np.ndarray
    backtracks: np.ndarray
    shell: np.ndarray = field(repr=False)

    def rank(self) -> np.ndarray:
        r = np.empty(self.order.size, dtype=int)
        r[self.order] = np.arange(1, self.order.size + 1)
        return r

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["node", "grade", "rank"])
        rank = self.rank()
        for i in range(self.grades.size):
            w.writerow([i, repr(float(self.grades[i])), int(rank[i])])
        return buf.getvalue()


def neighbor_pressure(node: int, state: ExpectedState, adjacency, params: NodeParams, t_w: float) -> float:
    """t_w · Σ over neighbours j of β_j + α_j Σ_k a_jk (M_k + S_k)."""
    a = np.asarray(adjacency, dtype=float)
    p = pressures(state.as_array(), a, params)
    return float(t_w * (a[node] @ p))


def _ordinal_rank(values: np.ndarray) -> np.ndarray:
    # higher value -> higher rank; ties resolved by node index
    order = np.lexsort((np.arange(values.size), values))
    r = np.empty(values.size, dtype=int)
    r[order] = np.arange(values.size)
    return r


def initial_scores(inputs: GradeInputs, params: NodeParams) -> np.ndarray:
    """One-hop aggregated pressure per node at time ``t``.

    With ``worst_case`` the most important still-clean neighbour of each node
    (largest betweenness rank plus service-weight rank, M+S < 0.5) is treated
    as fully compromised.
    """
    a = inputs.schedule.adjacency_at(inputs.t).astype(float)
    x = inputs.state.as_array()
    infected = x[1] + x[2]
    base = params.beta + params.alpha * (a @ infected)
    scores = a @ base
    if inputs.worst_case:
        importance = _ordinal_rank(betweenness(a)) + _ordinal_rank(inputs.weights)
        clean = infected < 0.5
        for i in range(inputs.n):
            nb = np.flatnonzero((a[i] > 0) & clean)
            if nb.size == 0:
                continue
            # max importance, lowest index on ties
            w = int(nb[np.argmax(importance[nb])])
            bump = params.alpha * a[:, w] * (1.0 - infected[w])
            scores[i] += a[i] @ bump
    return inputs.t_w * scores


class PeriodValues:
    """Memoised (spectral radius, normalised utility) per period and removal set."""

    def __init__(self, schedule: TopologySchedule, params: NodeParams, weights, recovery=None,
                 utility_mode: str = "lcc"):
        self.schedule = schedule
        self.alpha = params.alpha
        self.recovery = params.delta_hi if recovery is None else np.asarray(recovery, dtype=float)
        self.weights = np.asarray(weights, dtype=float)
        self.U = float(self.weights.sum())
        self.mode = utility_mode
        self._snap = {}
        self._memo = {}

    def __call__(self, k: int, removed: frozenset) -> tuple[float, float]:
        key = (k, removed)
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        a = self.schedule.segments[k].adjacency
        keep = np.setdiff1d(np.arange(a.shape[0]), np.fromiter(removed, dtype=int, count=len(removed)))
        m = threshold_matrix(self.alpha, a, self.recovery)
        rho = spectral_radius(m[np.ix_(keep, keep)]) if keep.size else 0.0
        snap = self._snap.get(k)
        if snap is None:
            snap = self._snap[k] = GraphSnapshot(a, self.weights)
        Z = network_utility(snap, sorted(removed), self.mode) / self.U
        self._memo[key] = (rho, Z)
        return rho, Z


def _sweep_node(score: float, k_start: int, n_periods: int, vals, prev0, sign: float,
                rho_phi: float, Z_phi: float, max_backtracks):
    """Walk periods k_start..K-1 for one node; returns (score, iterations, backtracks).

    ``vals(k)`` gives the node's (ρ, Z) in period k and ``prev0`` the
    reference pair for the first period. ``sign`` is +1 for threat grading
    (forward when contagion rises more than utility) and −1 for recovery
    grading (forward when utility gains outweigh contagion).
    """
    K = n_periods
    span = K - k_start
    budget = span * (span + 1) // 2
    rho_eps = Z_eps = 0.0
    k = k_start
    iters = backtracks = 0
    while k < K:
        iters += 1
        score += rho_phi * rho_eps + Z_phi * Z_eps
        rho_k, Z_k = vals(k)
        rho_p, Z_p = vals(k - 1) if k > k_start else prev0
        d_rho, d_Z = rho_k - rho_p, Z_k - Z_p
        ok = sign * (rho_phi * d_rho - Z_phi * d_Z) > 0
        # stepping back must still leave room to finish every period
        room = budget - iters >= K - k + 1
        capped = max_backtracks is not None and backtracks >= max_backtracks
        if ok or k == k_start or capped or not room:
            k += 1
        else:
            rho_eps += d_rho
            Z_eps += d_Z
            backtracks += 1
            k -= 1
    return score, iters, backtracks


def threat_grade(inputs: GradeInputs, params: NodeParams, cache: PeriodValues | None = None) -> GradeList:
    """Threat-rate grades; the top-j nodes' grades sum to one."""
    n = inputs.n
    if n == 0:
        raise DomainError("cannot grade an empty graph")
    j = min(n, int(math.floor((inputs.U - inputs.U_n) / inputs.I_bar + 1e-12)))
    if j <= 0:
        raise ConfigurationError("loss budget (U - U_n) / I_bar admits no node")
    vals_of = cache or PeriodValues(inputs.schedule, params, inputs.weights, utility_mode=inputs.utility_mode)
    K = len(inputs.schedule)
    k0 = inputs.k_start
    init = initial_scores(inputs, params)
    scores = np.empty(n)
    iters = np.zeros(n, dtype=int)
    backs = np.zeros(n, dtype=int)
    intact = vals_of(k0, frozenset())
    for i in range(n):
        gone = frozenset((i,))
        scores[i], iters[i], backs[i] = _sweep_node(
            float(init[i]), k0, K, lambda k: vals_of(k, gone), intact, 1.0,
            inputs.rho_phi, inputs.Z_phi, inputs.max_backtracks)
    scores = np.maximum(scores, 0.0)
    order = np.lexsort((np.arange(n), -scores))
    total = scores[order[:j]].sum()
    grades = scores / total if total > 0 else np.full(n, 1.0 / j)
    shell = k_shell(inputs.schedule.segments[k0].adjacency)
    return GradeList("threat", grades, scores, order, np.arange(n), j, iters, backs, shell)


def recovery_grade(inputs: GradeInputs, quarantined, params: NodeParams, cache: PeriodValues | None = None) -> GradeList:
    """Recovery-rate grades over the quarantined candidates, summing to one."""
    cand = np.array(sorted({int(v) for v in quarantined}), dtype=int)
    n = inputs.n
    if cand.size == 0:
        raise DomainError("recovery grading needs at least one quarantined node")
    if cand[0] < 0 or cand[-1] >= n:
        raise DomainError("quarantined nodes must be valid indices")
    vals_of = cache or PeriodValues(inputs.schedule, params, inputs.weights, utility_mode=inputs.utility_mode)
    K = len(inputs.schedule)
    k0 = inputs.k_start
    init = initial_scores(inputs, params)
    qset = frozenset(cand.tolist())
    isolated = vals_of(k0, qset)
    scores = np.zeros(n)
    iters = np.zeros(n, dtype=int)
    backs = np.zeros(n, dtype=int)
    for i in cand:
        rest = qset - {int(i)}
        scores[i], iters[i], backs[i] = _sweep_node(
            float(init[i]), k0, K, lambda k: vals_of(k, rest), isolated, -1.0,
            inputs.rho_phi, inputs.Z_phi, inputs.max_backtracks)
    scores = np.maximum(scores, 0.0)
    grades = np.zeros(n)
    total = scores[cand].sum()
    grades[cand] = scores[cand] / total if total > 0 else 1.0 / cand.size
    order = np.lexsort((np.arange(n), -grades))
    shell = k_shell(inputs.schedule.segments[k0].adjacency)
    return GradeList("recovery", grades, scores, order, cand, None, iters, backs, shell)


def modulated_bounds(lo, hi, grades, n: int | None = None) -> np.ndarray:
    """Per-node upper bound hi · (0.5 + grade · N / 2), clipped into [lo, hi].

    A node with the average grade 1/N keeps its full range; low-grade nodes
    get a tighter ceiling.
    """
    g = np.asarray(grades, dtype=float)
    n = g.size if n is None else n
    return np.clip(np.asarray(hi, dtype=float) * (0.5 + g * n / 2.0), lo, hi)
