"""Fully resolved scenario: every array built, ready for the solvers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .control import ControlProblem, SweepSettings
from .epidemic import ExpectedState, NodeParams, make_grid
from .errors import DomainError
from .impact import CostFunctions
from .topology import TopologySchedule


@dataclass
class GradingSettings:
    t_w: float = 1.0
    rho_phi: float = 0.5
    Z_phi: float = 0.5
    max_backtracks: int | None = None
    worst_case: bool = True
    utility_mode: str = "lcc"
    # entry Q above this marks a node as quarantined for recovery grading
    quarantine_threshold: float = 0.05


@dataclass
class Scenario:
    name: str
    schedule: TopologySchedule
    params: NodeParams
    costs: CostFunctions
    E0: ExpectedState
    weights: np.ndarray
    U_n: float
    grid_step: float = 0.01
    sweep: SweepSettings = field(default_factory=SweepSettings)
    grading: GradingSettings = field(default_factory=GradingSettings)
    seed: int = 0
    # optional attacker manipulation of the task statistics (1.0 = off)
    alpha_scale: float = 1.0
    beta_scale: float = 1.0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        n = self.schedule.n_nodes
        if self.params.n != n or self.E0.n != n or self.weights.shape != (n,):
            raise DomainError("schedule, params, initial state and weights disagree on node count")
        if not 0.0 < self.U_n < self.U:
            raise DomainError(f"need 0 < U_n < U, got U_n={self.U_n}, U={self.U}")
        if self.grid_step <= 0:
            raise DomainError("grid_step must be positive")

    @property
    def U(self) -> float:
        return float(self.weights.sum())

    @property
    def n(self) -> int:
        return self.schedule.n_nodes

    @property
    def slots(self) -> list[tuple[float, float]]:
        return self.schedule.intervals

    @property
    def attack_params(self) -> NodeParams:
        if self.alpha_scale == 1.0 and self.beta_scale == 1.0:
            return self.params
        return self.params.with_(alpha=self.params.alpha * self.alpha_scale,
                                 beta=self.params.beta * self.beta_scale)

    def grid(self, t0: float = 0.0, t1: float | None = None) -> np.ndarray:
        return make_grid(self.schedule, self.grid_step, t0, t1)

    def problem(self, t0=0.0, t1=None, E0=None, params=None, fixed_lambda=None) -> ControlProblem:
        return ControlProblem(self.schedule, params or self.attack_params, self.costs,
                              self.E0 if E0 is None else E0, self.weights, self.U_n,
                              self.grid(t0, t1), fixed_lambda)
