"""Cost families and the resource, service and repair impact functionals."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .epidemic import ControlTrajectory, NodeParams, StateTrajectory
from .errors import DomainError
from .topology import GraphSnapshot

FAMILIES = ("sqrt", "linear", "quadratic")


@dataclass(frozen=True)
class CostFamily:
    """``coef * g(x)`` with g one of sqrt, identity or square.

    ``coef`` may be a scalar or a per-node vector.
    """

    kind: str = "sqrt"
    coef: float | np.ndarray = 1.0

    def __post_init__(self):
        if self.kind not in FAMILIES:
            raise DomainError(f"unknown cost family {self.kind!r}")
        c = np.asarray(self.coef, dtype=float)
        if not np.all(np.isfinite(c)) or np.any(c < 0):
            raise DomainError("cost coefficients must be finite and non-negative")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "sqrt":
            return self.coef * np.sqrt(np.clip(x, 0.0, None))
        if self.kind == "linear":
            return self.coef * x
        return self.coef * x * x

    def deriv(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "sqrt":
            with np.errstate(divide="ignore"):
                return self.coef * 0.5 / np.sqrt(np.clip(x, 0.0, None))
        if self.kind == "linear":
            return self.coef * np.ones_like(x)
        return 2.0 * self.coef * x

    @property
    def concave(self) -> bool:
        return self.kind in ("sqrt", "linear")

    @property
    def convex(self) -> bool:
        return self.kind in ("linear", "quadratic")

    def to_dict(self) -> dict:
        c = np.asarray(self.coef)
        return {"family": self.kind, "coef": c.tolist() if c.ndim else float(c)}

    @classmethod
    def from_dict(cls, data) -> "CostFamily":
        return cls(data.get("family", "sqrt"), np.asarray(data.get("coef", 1.0), dtype=float)
                   if isinstance(data.get("coef"), list) else float(data.get("coef", 1.0)))


@dataclass(frozen=True)
class CostFunctions:
    """Quarantine cost φ(δ), recovery cost ϱ¹(γ) and hold cost ϱ²(1−γ)."""

    phi: CostFamily = field(default_factory=CostFamily)
    rho1: CostFamily = field(default_factory=CostFamily)
    rho2: CostFamily = field(default_factory=CostFamily)

    def quarantine_cost(self, delta):
        return self.phi(delta)

    def recovery_cost(self, gamma):
        """ϱ¹(γ) + ϱ²(1−γ)."""
        gamma = np.asarray(gamma, dtype=float)
        return self.rho1(gamma) + self.rho2(1.0 - gamma)

    def recovery_cost_deriv(self, gamma):
        gamma = np.asarray(gamma, dtype=float)
        return self.rho1.deriv(gamma) - self.rho2.deriv(1.0 - gamma)

    def to_dict(self) -> dict:
        return {"phi": self.phi.to_dict(), "rho1": self.rho1.to_dict(), "rho2": self.rho2.to_dict()}

    @classmethod
    def from_dict(cls, data) -> "CostFunctions":
        return cls(*(CostFamily.from_dict(data.get(k, {})) for k in ("phi", "rho1", "rho2")))


ZERO_COSTS = CostFunctions(CostFamily("linear", 0.0), CostFamily("linear", 0.0), CostFamily("linear", 0.0))


def integrand_parts(x, lam, delta, gamma, params: NodeParams, costs: CostFunctions) -> np.ndarray:
    """Instantaneous (resource, service, repair) loss rates summed over nodes.

    ``x`` may carry leading batch axes: shape ``(..., 3, N)``.
    """
    H, M, S = x[..., 0, :], x[..., 1, :], x[..., 2, :]
    Q = 1.0 - H - M - S
    resource = (params.a1 * M + params.a2 * S).sum(axis=-1)
    service = (params.b * Q).sum(axis=-1)
    repair = (costs.quarantine_cost(delta) * S + costs.recovery_cost(gamma) * Q).sum(axis=-1)
    return np.stack([resource, service, repair], axis=-1)


def impact_integrand(x, lam, delta, gamma, params, costs) -> float:
    return integrand_parts(x, lam, delta, gamma, params, costs).sum(axis=-1)


@dataclass(frozen=True)
class ImpactBreakdown:
    L: float
    E: float
    C: float

    @property
    def I(self) -> float:
        return self.L + self.E + self.C

    def __iter__(self):
        return iter((self.L, self.E, self.C, self.I))

    def __add__(self, other: "ImpactBreakdown") -> "ImpactBreakdown":
        return ImpactBreakdown(self.L + other.L, self.E + other.E, self.C + other.C)

    def to_dict(self) -> dict:
        return {"L": self.L, "E": self.E, "C": self.C, "I": self.I}


def step_impacts(traj: StateTrajectory, control: ControlTrajectory, params: NodeParams,
                 costs: CostFunctions) -> np.ndarray:
    """Trapezoid contribution of every grid step, shape ``(K, 3)``."""
    if traj.x.shape[0] != control.steps + 1 or not np.allclose(traj.grid, control.grid, rtol=0, atol=1e-12):
        raise DomainError("trajectory and control grids differ")
    h = np.diff(control.grid)[:, None]
    left = integrand_parts(traj.x[:-1], control.lam, control.delta, control.gamma, params, costs)
    right = integrand_parts(traj.x[1:], control.lam, control.delta, control.gamma, params, costs)
    return 0.5 * h * (left + right)


def impact_components(traj: StateTrajectory, control: ControlTrajectory, params: NodeParams,
                      costs: CostFunctions) -> ImpactBreakdown:
    """L, E and C over the control grid by composite trapezoid."""
    total = step_impacts(traj, control, params, costs).sum(axis=0)
    return ImpactBreakdown(*(float(v) for v in total))


def instantaneous_utility(state, snapshot: GraphSnapshot | np.ndarray) -> float | np.ndarray:
    """Service still delivered: Σ u_i (1 − Q_i).

    ``state`` is an :class:`ExpectedState` or an array ``(..., 3, N)``.
    """
    weights = snapshot.service_weights if isinstance(snapshot, GraphSnapshot) else np.asarray(snapshot, dtype=float)
    x = state.as_array() if hasattr(state, "as_array") else np.asarray(state, dtype=float)
    served = x.sum(axis=-2)
    return (weights * served).sum(axis=-1)


def utility_series(traj: StateTrajectory, weights) -> np.ndarray:
    return instantaneous_utility(traj.x, weights)


def step_csv_rows(traj: StateTrajectory, control: ControlTrajectory, params, costs):
    """Per-step (t_start, t_end, L, E, C, I) rows for CSV export."""
    parts = step_impacts(traj, control, params, costs)
    for k, (l, e, c) in enumerate(parts):
        yield control.grid[k], control.grid[k + 1], l, e, c, l + e + c
