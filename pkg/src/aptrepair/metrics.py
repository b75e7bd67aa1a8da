"""Resource occupancy, defense-resource utilization and service stability.

Repairs and quarantines are weighted 1:2 against a capacity weight of 4;
capacity per slot is one tenth of the network utility U.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .epidemic import ControlTrajectory, StateTrajectory
from .errors import DomainError
from .impact import utility_series

W_REPAIR = 1.0
W_QUARANTINE = 2.0
W_CAPACITY = 4.0
CAPACITY_SHARE = 0.1
COUNT_THRESHOLD = 0.05


def _slot_steps(grid: np.ndarray, slot) -> tuple[int, int]:
    t0, t1 = slot
    k0 = int(np.argmin(np.abs(grid - t0)))
    k1 = int(np.argmin(np.abs(grid - t1)))
    if abs(grid[k0] - t0) > 1e-9 or abs(grid[k1] - t1) > 1e-9 or k1 <= k0:
        raise DomainError(f"slot {slot} is not aligned with the grid")
    return k0, k1


def expected_counts(traj: StateTrajectory, control: ControlTrajectory, slot, threshold: float | None = None):
    """(N_r, N_q) over ``slot``.

    By default these are expected counts: ∫ Σ γ_i Q_i dt and ∫ Σ δ_i S_i dt
    by per-step trapezoid. With ``threshold`` set, they are instead the
    number of nodes whose flow γ_i Q_i (resp. δ_i S_i) exceeds the threshold
    at some grid point of the slot.
    """
    k0, k1 = _slot_steps(control.grid, slot)
    Q, S = traj.Q, traj.S
    gam, dlt = control.gamma[k0:k1], control.delta[k0:k1]
    if threshold is not None:
        rep = np.maximum(gam * Q[k0:k1], gam * Q[k0 + 1:k1 + 1]) > threshold
        qua = np.maximum(dlt * S[k0:k1], dlt * S[k0 + 1:k1 + 1]) > threshold
        return float(rep.any(axis=0).sum()), float(qua.any(axis=0).sum())
    h = np.diff(control.grid[k0:k1 + 1])[:, None]
    n_r = 0.5 * h * gam * (Q[k0:k1] + Q[k0 + 1:k1 + 1])
    n_q = 0.5 * h * dlt * (S[k0:k1] + S[k0 + 1:k1 + 1])
    return float(n_r.sum()), float(n_q.sum())


@dataclass
class RunRecord:
    """One method's trajectory plus what the metrics need.

    ``reclassify`` books every quarantine as a repair (used for the
    no-isolation baseline).
    """

    method: str
    states: StateTrajectory
    control: ControlTrajectory
    weights: np.ndarray
    U_n: float
    slots: list
    reclassify: bool = False
    threshold: float | None = None
    counts: list = field(init=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.counts = []
        for slot in self.slots:
            n_r, n_q = expected_counts(self.states, self.control, slot, self.threshold)
            if n_r < 0 or n_q < 0:
                raise DomainError("negative operation count")
            if self.reclassify:
                n_r, n_q = n_r + n_q, 0.0
            self.counts.append((n_r, n_q))

    @property
    def U(self) -> float:
        return float(self.weights.sum())

    @property
    def sum_Cr(self) -> float:
        return float(sum(c[0] for c in self.counts))

    @property
    def sum_Cq(self) -> float:
        return float(sum(c[1] for c in self.counts))

    @property
    def consumption(self) -> float:
        return W_REPAIR * self.sum_Cr + W_QUARANTINE * self.sum_Cq

    def utility(self) -> np.ndarray:
        return utility_series(self.states, self.weights)

    def slot_stable(self) -> list[bool]:
        u = self.utility()
        tol = 1e-9 * max(1.0, self.U)
        out = []
        for slot in self.slots:
            k0, k1 = _slot_steps(self.states.grid, slot)
            out.append(bool(np.all(u[k0:k1 + 1] >= self.U_n - tol)))
        return out


def resource_occupancy(record: RunRecord) -> float:
    denom = W_CAPACITY * CAPACITY_SHARE * record.U * len(record.slots)
    if denom <= 0:
        raise DomainError("occupancy denominator is zero")
    return record.consumption / denom


def defense_resource_utilization(record: RunRecord) -> dict:
    """1 − capacity budget / consumption, with raw parts and a negativity flag."""
    used = record.consumption
    if used <= 0:
        raise DomainError("utilization is undefined with zero consumption")
    budget = W_CAPACITY * CAPACITY_SHARE * (record.U - record.U_n) * len(record.slots)
    value = 1.0 - budget / used
    return {"value": value, "numerator": budget, "denominator": used, "negative": value < 0}


def service_stability(record: RunRecord) -> tuple[float, float]:
    """(N_s / slots, 0.4 · N_s / slots)."""
    flags = record.slot_stable()
    n_s = sum(flags)
    return n_s / len(flags), W_CAPACITY * CAPACITY_SHARE * n_s / len(flags)


def metrics_summary(record: RunRecord) -> dict:
    stab, literal = service_stability(record)
    try:
        util = defense_resource_utilization(record)
    except DomainError:
        util = {"value": None, "numerator": None, "denominator": 0.0, "negative": False}
    return {
        "occupancy": resource_occupancy(record),
        "utilization": util["value"],
        "utilization_negative": util["negative"],
        "stability_normalized": stab,
        "stability_literal": literal,
        "raw": {
            "sum_Cr": record.sum_Cr,
            "sum_Cq": record.sum_Cq,
            "sum_U": record.U * len(record.slots),
            "sum_budget": (record.U - record.U_n) * len(record.slots),
            "N_s": int(sum(record.slot_stable())),
            "slots": len(record.slots),
        },
    }
