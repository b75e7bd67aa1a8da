"""Node-level mean-field dynamics of the healthy/mild/severe/quarantined process.

States are carried as arrays of shape ``(3, N)`` holding the H, M and S
probabilities; the quarantined probability is ``1 - H - M - S``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import DomainError, IntegrationError
from .topology import TopologySchedule

DEFAULT_STEP = 0.01
RENORM_TOL = 1e-12


def _vec(value, n, name) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(n, float(arr))
    if arr.shape != (n,):
        raise DomainError(f"{name} must be a scalar or length-{n} vector")
    return arr


@dataclass(frozen=True)
class NodeParams:
    """Per-node attack rates, control bounds and impact coefficients."""

    alpha: np.ndarray
    beta: np.ndarray
    delta_lo: np.ndarray
    delta_hi: np.ndarray
    lam_lo: np.ndarray
    lam_hi: np.ndarray
    gamma_lo: np.ndarray
    gamma_hi: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.alpha).size
        for name in self.__dataclass_fields__:
            arr = _vec(getattr(self, name), n, name).copy()
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise DomainError(f"{name} must be finite and non-negative")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        for ctl in ("delta", "lam", "gamma"):
            if np.any(getattr(self, f"{ctl}_lo") > getattr(self, f"{ctl}_hi")):
                raise DomainError(f"{ctl}_lo exceeds {ctl}_hi")

    @classmethod
    def uniform(cls, n, alpha=0.0, beta=0.0, delta=(0.0, 0.0), lam=(0.0, 0.0), gamma=(0.0, 0.0),
                a1=0.0, a2=0.0, b=0.0) -> "NodeParams":
        return cls(
            alpha=_vec(alpha, n, "alpha"), beta=_vec(beta, n, "beta"),
            delta_lo=_vec(delta[0], n, "delta_lo"), delta_hi=_vec(delta[1], n, "delta_hi"),
            lam_lo=_vec(lam[0], n, "lam_lo"), lam_hi=_vec(lam[1], n, "lam_hi"),
            gamma_lo=_vec(gamma[0], n, "gamma_lo"), gamma_hi=_vec(gamma[1], n, "gamma_hi"),
            a1=_vec(a1, n, "a1"), a2=_vec(a2, n, "a2"), b=_vec(b, n, "b"),
        )

    @property
    def n(self) -> int:
        return self.alpha.size

    def with_(self, **changes) -> "NodeParams":
        return replace(self, **changes)

    def bounds(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        return getattr(self, f"{name}_lo"), getattr(self, f"{name}_hi")


@dataclass(frozen=True)
class ExpectedState:
    H: np.ndarray
    M: np.ndarray
    S: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.H).size
        for name in ("H", "M", "S"):
            object.__setattr__(self, name, _vec(getattr(self, name), n, name).copy())

    @classmethod
    def uniform(cls, n, H=1.0, M=0.0, S=0.0) -> "ExpectedState":
        return cls(np.full(n, float(H)), np.full(n, float(M)), np.full(n, float(S)))

    @classmethod
    def from_array(cls, x) -> "ExpectedState":
        x = np.asarray(x, dtype=float)
        return cls(x[0].copy(), x[1].copy(), x[2].copy())

    @property
    def Q(self) -> np.ndarray:
        return 1.0 - self.H - self.M - self.S

    @property
    def n(self) -> int:
        return self.H.size

    def as_array(self) -> np.ndarray:
        return np.stack([self.H, self.M, self.S])

    def is_valid(self, tol=1e-9) -> bool:
        parts = np.stack([self.H, self.M, self.S, self.Q])
        return bool(np.all(parts >= -tol) and np.all(parts <= 1 + tol))


def make_grid(schedule: TopologySchedule, step: float = DEFAULT_STEP, t0: float = 0.0,
              t1: float | None = None) -> np.ndarray:
    """Time grid on [t0, t1] with spacing <= ``step`` that hits every breakpoint."""
    if step <= 0:
        raise DomainError("grid step must be positive")
    t1 = schedule.horizon_end if t1 is None else t1
    if not 0.0 <= t0 < t1 <= schedule.horizon_end:
        raise DomainError(f"bad grid range [{t0}, {t1}]")
    cuts = [t0] + [b for b in schedule.breakpoints if t0 < b < t1] + [t1]
    pieces = []
    for a, b in zip(cuts[:-1], cuts[1:]):
        n = max(1, math.ceil((b - a) / step - 1e-9))
        pieces.append(np.linspace(a, b, n + 1)[:-1])
    return np.concatenate(pieces + [np.array([t1])])


def step_segments(schedule: TopologySchedule, grid: np.ndarray) -> np.ndarray:
    """Segment index used on each grid step; rejects grids that straddle a breakpoint."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise DomainError("grid must be strictly increasing with at least two points")
    inner = [b for b in schedule.breakpoints[1:-1] if grid[0] < b < grid[-1]]
    for b in inner:
        if not np.any(np.isclose(grid, b, rtol=0, atol=1e-12)):
            raise DomainError(f"grid misses topology breakpoint t={b}")
    mids = 0.5 * (grid[:-1] + grid[1:])
    return np.array([schedule.segment_index(t) for t in mids])


@dataclass
class ControlTrajectory:
    """Piecewise-constant (λ, δ, γ) per grid step; arrays are ``(K, N)``."""

    grid: np.ndarray
    lam: np.ndarray
    delta: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        k = self.grid.size - 1
        if k < 1 or np.any(np.diff(self.grid) <= 0):
            raise DomainError("control grid must be strictly increasing")
        for name in ("lam", "delta", "gamma"):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.ndim != 2 or arr.shape[0] != k:
                raise DomainError(f"{name} must have shape (K, N) with K={k}")
            setattr(self, name, arr)
        if not (self.lam.shape == self.delta.shape == self.gamma.shape):
            raise DomainError("control components disagree in shape")

    @classmethod
    def constant(cls, grid, n, lam, delta, gamma) -> "ControlTrajectory":
        k = len(grid) - 1
        def fill(v):
            return np.broadcast_to(_vec(v, n, "control"), (k, n)).copy()
        return cls(np.asarray(grid, dtype=float), fill(lam), fill(delta), fill(gamma))

    @classmethod
    def at_bounds(cls, grid, params: NodeParams, which="lo") -> "ControlTrajectory":
        return cls.constant(grid, params.n, getattr(params, f"lam_{which}"),
                            getattr(params, f"delta_{which}"), getattr(params, f"gamma_{which}"))

    @property
    def n(self) -> int:
        return self.lam.shape[1]

    @property
    def steps(self) -> int:
        return self.lam.shape[0]

    def stacked(self) -> np.ndarray:
        return np.stack([self.lam, self.delta, self.gamma])

    @classmethod
    def from_stacked(cls, grid, arr) -> "ControlTrajectory":
        return cls(grid, arr[0], arr[1], arr[2])

    def copy(self) -> "ControlTrajectory":
        return ControlTrajectory(self.grid.copy(), self.lam.copy(), self.delta.copy(), self.gamma.copy())

    def window(self, k0: int, k1: int) -> "ControlTrajectory":
        return ControlTrajectory(self.grid[k0:k1 + 1], self.lam[k0:k1], self.delta[k0:k1], self.gamma[k0:k1])

    def within_bounds(self, params: NodeParams, tol=1e-12, delta_floor_override=False) -> bool:
        ok = True
        for name in ("lam", "delta", "gamma"):
            lo, hi = params.bounds(name)
            vals = getattr(self, name)
            if name == "delta" and delta_floor_override:
                lo = np.zeros_like(lo)
            ok &= bool(np.all(vals >= lo - tol) and np.all(vals <= hi + tol))
        return ok


def concat_controls(parts) -> ControlTrajectory:
    grid = np.concatenate([parts[0].grid] + [p.grid[1:] for p in parts[1:]])
    return ControlTrajectory(grid, *(np.concatenate([getattr(p, k) for p in parts]) for k in ("lam", "delta", "gamma")))


@dataclass
class StateTrajectory:
    """States sampled on the grid; ``x`` has shape ``(K+1, 3, N)``."""

    grid: np.ndarray
    x: np.ndarray
    pre_clamp_min: float = 0.0
    pre_clamp_max: float = 1.0
    renormalized_steps: int = 0

    @property
    def H(self):
        return self.x[:, 0]

    @property
    def M(self):
        return self.x[:, 1]

    @property
    def S(self):
        return self.x[:, 2]

    @property
    def Q(self):
        return 1.0 - self.x.sum(axis=1)

    def at(self, k: int) -> ExpectedState:
        return ExpectedState.from_array(self.x[k])

    @property
    def final(self) -> ExpectedState:
        return self.at(-1)


def concat_states(parts) -> StateTrajectory:
    grid = np.concatenate([parts[0].grid] + [p.grid[1:] for p in parts[1:]])
    x = np.concatenate([parts[0].x] + [p.x[1:] for p in parts[1:]])
    return StateTrajectory(grid, x, min(p.pre_clamp_min for p in parts), max(p.pre_clamp_max for p in parts),
                           sum(p.renormalized_steps for p in parts))


# --- dynamics ---------------------------------------------------------------

def pressures(x: np.ndarray, adjacency: np.ndarray, params: NodeParams) -> np.ndarray:
    """Compromise rate of every healthy node: β_i + α_i Σ_j a_ij (M_j + S_j)."""
    return params.beta + params.alpha * (adjacency @ (x[1] + x[2]))


def infection_pressure(state: ExpectedState, params: NodeParams, adjacency, i: int) -> float:
    return float(pressures(state.as_array(), np.asarray(adjacency, dtype=float), params)[i])


def derivative(x, lam, delta, gamma, adjacency, params) -> np.ndarray:
    H, M, S = x
    Q = 1.0 - H - M - S
    inflow = H * pressures(x, adjacency, params)
    return np.stack([gamma * Q - inflow, inflow - lam * M, lam * M - delta * S])


def state_derivative(state: ExpectedState, controls_at_t, adjacency, params: NodeParams) -> np.ndarray:
    """Per-node (dH, dM, dS) as an array of shape (3, N)."""
    lam, delta, gamma = (np.asarray(c, dtype=float) for c in controls_at_t)
    return derivative(state.as_array(), lam, delta, gamma, np.asarray(adjacency, dtype=float), params)


def rk4_step(x, h, lam, delta, gamma, adjacency, params) -> np.ndarray:
    k1 = derivative(x, lam, delta, gamma, adjacency, params)
    k2 = derivative(x + 0.5 * h * k1, lam, delta, gamma, adjacency, params)
    k3 = derivative(x + 0.5 * h * k2, lam, delta, gamma, adjacency, params)
    k4 = derivative(x + h * k3, lam, delta, gamma, adjacency, params)
    return x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def clamp_state(x: np.ndarray) -> tuple[np.ndarray, bool]:
    """Clip H, M, S into [0, 1] and rescale when they overfill the unit mass."""
    y = np.clip(x, 0.0, 1.0)
    total = y.sum(axis=0)
    over = total > 1.0 + RENORM_TOL
    if np.any(over):
        y[:, over] /= total[over]
    return y, bool(np.any(over) or np.any(y != x))


class Integrator:
    """Steps the mean-field ODE over a fixed grid with cached step adjacencies."""

    def __init__(self, schedule: TopologySchedule, grid, params: NodeParams):
        self.grid = np.asarray(grid, dtype=float)
        self.params = params
        if schedule.n_nodes != params.n:
            raise DomainError("schedule and params disagree on node count")
        seg = step_segments(schedule, self.grid)
        mats = {i: schedule.segments[i].adjacency.astype(float) for i in set(seg.tolist())}
        self.adjacency = [mats[i] for i in seg]
        self.segment_of_step = seg

    def run(self, x0: np.ndarray, control: ControlTrajectory, step_hook=None) -> tuple[StateTrajectory, ControlTrajectory]:
        """Integrate from ``x0``.

        ``step_hook(k, x, lam, delta, gamma)`` may return adjusted controls
        for step ``k``; the returned control trajectory holds what was applied.
        """
        if control.steps != self.grid.size - 1 or not np.allclose(control.grid, self.grid, atol=1e-12, rtol=0):
            raise DomainError("control grid does not match the integration grid")
        applied = control.copy() if step_hook else control
        xs = np.empty((self.grid.size, 3, self.params.n))
        x = np.asarray(x0, dtype=float)
        xs[0] = x
        lo, hi, renorm = 0.0, 1.0, 0
        for k in range(self.grid.size - 1):
            h = self.grid[k + 1] - self.grid[k]
            lam, delta, gamma = control.lam[k], control.delta[k], control.gamma[k]
            if step_hook is not None:
                lam, delta, gamma = step_hook(k, x, lam, delta, gamma)
                applied.lam[k], applied.delta[k], applied.gamma[k] = lam, delta, gamma
            y = rk4_step(x, h, lam, delta, gamma, self.adjacency[k], self.params)
            if not np.all(np.isfinite(y)):
                raise IntegrationError(f"non-finite state at step {k} (t={self.grid[k]:.6g})", step=k)
            q = 1.0 - y.sum(axis=0)
            lo = min(lo, float(y.min()), float(q.min()))
            hi = max(hi, float(y.max()), float(q.max()))
            x, changed = clamp_state(y)
            renorm += changed
            xs[k + 1] = x
        return StateTrajectory(self.grid.copy(), xs, lo, hi, renorm), applied


def integrate_forward(E0: ExpectedState, control: ControlTrajectory, schedule: TopologySchedule,
                      params: NodeParams) -> StateTrajectory:
    """Classical RK4 on the control grid with clamp-and-renormalize after each step."""
    traj, _ = Integrator(schedule, control.grid, params).run(E0.as_array(), control)
    return traj


# --- Markov oracle ----------------------------------------------------------

def simulate_markov(params: NodeParams, control: ControlTrajectory, schedule: TopologySchedule,
                    E0: ExpectedState, n_runs: int, seed, routing: str = "ode",
                    max_dt: float = 0.01) -> StateTrajectory:
    """Monte-Carlo estimate of per-node state occupancy on the control grid.

    Each run is one realisation of the four-state chain; time is cut into
    sub-steps no wider than ``max_dt`` and every node jumps with probability
    ``1 - exp(-rate * dt)``. ``routing="split"`` sends a fraction λ of new
    compromises straight to severe instead of mild.
    """
    if n_runs < 1:
        raise DomainError("n_runs must be >= 1")
    if routing not in ("ode", "split"):
        raise DomainError(f"unknown routing {routing!r}")
    rng = np.random.default_rng(seed)
    n = params.n
    integ = Integrator(schedule, control.grid, params)
    probs = np.stack([E0.H, E0.M, E0.S, E0.Q])
    probs = np.clip(probs, 0.0, None)
    cum = np.cumsum(probs / probs.sum(axis=0), axis=0)
    u = rng.random((n_runs, n))
    state = (u[:, None, :] > cum[None, :, :]).sum(axis=1).clip(0, 3)

    def freq(s):
        return np.stack([(s == c).mean(axis=0) for c in range(3)])

    out = np.empty((control.grid.size, 3, n))
    out[0] = freq(state)
    for k in range(control.steps):
        h = control.grid[k + 1] - control.grid[k]
        sub = max(1, math.ceil(h / max_dt - 1e-9))
        dt = h / sub
        adj = integ.adjacency[k]
        lam, delta, gamma = control.lam[k], control.delta[k], control.gamma[k]
        for _ in range(sub):
            infected = ((state == 1) | (state == 2)).astype(float)
            press = params.beta + params.alpha * (infected @ adj)
            rate = np.where(state == 0, press,
                            np.where(state == 1, lam, np.where(state == 2, delta, gamma)))
            jump = rng.random((n_runs, n)) < -np.expm1(-rate * dt)
            nxt = np.where(state == 3, 0, state + 1)
            if routing == "split":
                severe = rng.random((n_runs, n)) < np.clip(lam, 0.0, 1.0)
                nxt = np.where((state == 0) & severe, 2, nxt)
            state = np.where(jump, nxt, state)
        out[k + 1] = freq(state)
    return StateTrajectory(control.grid.copy(), out)
