"""Pontryagin machinery for the repair-rate problem.

The Hamiltonian is the instantaneous impact plus the costate-weighted
dynamics. Adjoints come from differentiating that Hamiltonian directly, so
they stay consistent with whatever cost families are configured.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .epidemic import (ControlTrajectory, ExpectedState, Integrator, NodeParams, StateTrajectory,
                       clamp_state, derivative, pressures, rk4_step)
from .errors import DomainError, IntegrationError
from .impact import CostFunctions, ImpactBreakdown, impact_components, impact_integrand
from .topology import GraphSnapshot, TopologySchedule

log = logging.getLogger(__name__)

GOLDEN_TOL = 1e-8
_INVPHI = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass
class SweepSettings:
    max_iters: int = 500
    tol: float = 1e-4
    relaxation: float = 0.5
    grid_step: float = 0.01
    adaptive: bool = True
    min_relaxation: float = 1e-3

    def __post_init__(self):
        if self.max_iters < 1:
            raise DomainError("max_iters must be >= 1")
        if self.tol <= 0:
            raise DomainError("tol must be positive")
        if not 0.0 < self.relaxation <= 1.0:
            raise DomainError("relaxation must lie in (0, 1]")
        if self.grid_step <= 0:
            raise DomainError("grid_step must be positive")


@dataclass
class AdjointTrajectory:
    """Costates (κ, ρ, ξ) on the grid, shape ``(K+1, 3, N)``."""

    grid: np.ndarray
    y: np.ndarray

    @property
    def kappa(self):
        return self.y[:, 0]

    @property
    def rho(self):
        return self.y[:, 1]

    @property
    def xi(self):
        return self.y[:, 2]


@dataclass
class ControlProblem:
    """Everything a sweep needs over one time window.

    ``params`` already carries any grade-modulated bounds. ``fixed_lambda``
    pins λ (shape ``(K, N)``) when an attacker has chosen it.
    """

    schedule: TopologySchedule
    params: NodeParams
    costs: CostFunctions
    E0: ExpectedState
    weights: np.ndarray
    U_n: float
    grid: np.ndarray
    fixed_lambda: np.ndarray | None = None
    integrator: Integrator = field(init=False, repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.grid = np.asarray(self.grid, dtype=float)
        if self.weights.shape != (self.params.n,):
            raise DomainError("need one service weight per node")
        if self.E0.n != self.params.n:
            raise DomainError("initial state and params disagree on node count")
        if self.fixed_lambda is not None:
            self.fixed_lambda = np.broadcast_to(np.asarray(self.fixed_lambda, dtype=float),
                                                (self.grid.size - 1, self.params.n)).copy()
        self.integrator = Integrator(self.schedule, self.grid, self.params)

    @property
    def U(self) -> float:
        return float(self.weights.sum())

    @property
    def n(self) -> int:
        return self.params.n

    def adjacency(self, k: int) -> np.ndarray:
        return self.integrator.adjacency[k]

    def forward(self, control: ControlTrajectory) -> StateTrajectory:
        traj, _ = self.integrator.run(self.E0.as_array(), control)
        return traj

    def impact(self, control: ControlTrajectory) -> ImpactBreakdown:
        return impact_components(self.forward(control), control, self.params, self.costs)


# --- Hamiltonian and costates -------------------------------------------------

def _as_x(state) -> np.ndarray:
    return state.as_array() if isinstance(state, ExpectedState) else np.asarray(state, dtype=float)


def hamiltonian(state, controls, adjoints, adjacency, params: NodeParams, costs: CostFunctions) -> float:
    """Impact rate plus Σ κ_i dH_i + ρ_i dM_i + ξ_i dS_i."""
    x = _as_x(state)
    lam, delta, gamma = (np.asarray(c, dtype=float) for c in controls)
    y = np.asarray(adjoints, dtype=float)
    a = np.asarray(adjacency, dtype=float)
    dx = derivative(x, lam, delta, gamma, a, params)
    return float(impact_integrand(x, lam, delta, gamma, params, costs) + (y * dx).sum())


def _costate_rate(H, p, y, lam, delta, gamma, c, phi, at, params: NodeParams) -> np.ndarray:
    """(dκ, dρ, dξ) given pressures ``p`` and per-node cost terms ``c``, ``phi``."""
    kappa, rho, xi = y
    # p_k depends on M_i and S_i through α_k a_ki
    cross = at @ ((rho - kappa) * H * params.alpha)
    base = c + kappa * gamma
    out = np.empty_like(y)
    out[0] = base + (kappa - rho) * p
    out[1] = base - params.a1 - (xi - rho) * lam - cross
    out[2] = base - params.a2 - phi + xi * delta - cross
    return out


def adjoint_rhs(x, y, lam, delta, gamma, adjacency, params: NodeParams, costs: CostFunctions) -> np.ndarray:
    """(dκ, dρ, dξ) = −∂H/∂(H, M, S) evaluated analytically."""
    c = params.b + costs.recovery_cost(gamma)
    phi = costs.quarantine_cost(delta)
    return _costate_rate(x[0], pressures(x, adjacency, params), y, lam, delta, gamma, c, phi, adjacency.T, params)


def adjoint_derivative(state, controls, adjoints, adjacency, params, costs) -> np.ndarray:
    lam, delta, gamma = (np.asarray(c, dtype=float) for c in controls)
    return adjoint_rhs(_as_x(state), np.asarray(adjoints, dtype=float), lam, delta, gamma,
                       np.asarray(adjacency, dtype=float), params, costs)


def control_gradient(x, y, lam, delta, gamma, costs: CostFunctions) -> np.ndarray:
    """∂H/∂(λ, δ, γ) per node; ``x``/``y`` may carry leading batch axes."""
    H, M, S = x[..., 0, :], x[..., 1, :], x[..., 2, :]
    Q = 1.0 - H - M - S
    kappa, rho, xi = y[..., 0, :], y[..., 1, :], y[..., 2, :]
    g_lam = M * (xi - rho)
    g_delta = S * (costs.phi.deriv(delta) - xi)
    g_gamma = Q * (costs.recovery_cost_deriv(gamma) + kappa)
    return np.stack([g_lam, g_delta, g_gamma])


def integrate_adjoint(problem: ControlProblem, traj: StateTrajectory, control: ControlTrajectory) -> AdjointTrajectory:
    """RK4 backwards from zero terminal costates, states linearly interpolated."""
    grid = problem.grid
    K = grid.size - 1
    ys = np.zeros((K + 1, 3, problem.n))
    y = ys[K]
    pr = problem.params
    C = pr.b + problem.costs.recovery_cost(control.gamma)
    PHI = problem.costs.quarantine_cost(control.delta)
    transposed = {}
    for k in range(K - 1, -1, -1):
        h = grid[k + 1] - grid[k]
        a = problem.adjacency(k)
        at = transposed.get(id(a))
        if at is None:
            at = transposed[id(a)] = np.ascontiguousarray(a.T)
        lam, delta, gamma, c, phi = control.lam[k], control.delta[k], control.gamma[k], C[k], PHI[k]
        x1, x0 = traj.x[k + 1], traj.x[k]
        xm = 0.5 * (x0 + x1)
        p1, pm, p0 = (pressures(z, a, pr) for z in (x1, xm, x0))
        k1 = _costate_rate(x1[0], p1, y, lam, delta, gamma, c, phi, at, pr)
        k2 = _costate_rate(xm[0], pm, y - 0.5 * h * k1, lam, delta, gamma, c, phi, at, pr)
        k3 = _costate_rate(xm[0], pm, y - 0.5 * h * k2, lam, delta, gamma, c, phi, at, pr)
        k4 = _costate_rate(x0[0], p0, y - h * k3, lam, delta, gamma, c, phi, at, pr)
        y = y - h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        ys[k] = y
    bad = ~np.isfinite(ys).all(axis=(1, 2))
    if bad.any():
        k = int(np.flatnonzero(bad)[-1])
        raise IntegrationError(f"non-finite costate at step {k}", step=k)
    return AdjointTrajectory(grid.copy(), ys)


# --- pointwise minimisation ---------------------------------------------------

def _golden(obj, lo, hi, tol=GOLDEN_TOL):
    """Vectorised golden-section search for a unimodal minimum on [lo, hi]."""
    a, b = np.array(lo, dtype=float), np.array(hi, dtype=float)
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = obj(c), obj(d)
    while np.max(b - a) > tol:
        left = fc < fd
        a, b = np.where(left, a, c), np.where(left, d, b)
        c = b - _INVPHI * (b - a)
        d = a + _INVPHI * (b - a)
        fc, fd = obj(c), obj(d)
    return 0.5 * (a + b)


def bounded_argmin(obj, lo, hi, shape: str = "general", scan: int = 64):
    """Minimiser of ``obj`` on [lo, hi] elementwise; ties go to the lower end.

    ``shape`` is "concave" (endpoints suffice), "convex" (golden section) or
    "general" (coarse scan, golden refinement around the best sample).
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    lo, hi = np.broadcast_arrays(lo, hi)
    cands = [lo, hi]
    if shape == "convex":
        cands.append(np.clip(_golden(obj, lo, hi), lo, hi))
    elif shape == "general":
        ts = np.linspace(0.0, 1.0, scan + 1)
        pts = lo[None] + ts.reshape((-1,) + (1,) * lo.ndim) * (hi - lo)[None]
        vals = np.stack([obj(p) for p in pts])
        best = np.argmin(vals, axis=0)
        step = (hi - lo) / scan
        base = np.take_along_axis(pts, best[None], axis=0)[0]
        cands.append(np.clip(_golden(obj, np.maximum(lo, base - step), np.minimum(hi, base + step)), lo, hi))
    best_x, best_f = lo, obj(lo)
    for x in cands[1:]:
        f = obj(x)
        better = f < best_f - 1e-15 * np.maximum(1.0, np.abs(best_f))
        best_x = np.where(better, x, best_x)
        best_f = np.where(better, f, best_f)
    return best_x


def _delta_argmin(s_mass, xi, lo, hi, costs: CostFunctions):
    phi = costs.phi
    if phi.kind == "quadratic":
        with np.errstate(divide="ignore", invalid="ignore"):
            star = np.where(phi.coef > 0, xi / (2.0 * phi.coef), np.where(xi > 0, hi, lo))
        star = np.clip(star, lo, hi)
        obj = lambda d: phi(d) - xi * d
        out = bounded_argmin(obj, lo, hi, "concave")
        out = np.where(obj(star) < obj(out) - 1e-15, star, out)
    else:
        # sqrt and linear are concave, so the minimum sits on an endpoint
        out = bounded_argmin(lambda d: phi(d) - xi * d, lo, hi, "concave")
    return np.where(s_mass > 0, out, lo)


def _gamma_argmin(q_mass, kappa, lo, hi, costs: CostFunctions):
    r1, r2 = costs.rho1, costs.rho2
    obj = lambda g: costs.recovery_cost(g) + kappa * g
    if r1.concave and r2.concave:
        shape = "concave"
    elif r1.convex and r2.convex:
        shape = "convex"
    else:
        shape = "general"
    out = bounded_argmin(obj, lo, hi, shape)
    return np.where(q_mass > 0, out, lo)


def _lambda_argmin(m_mass, switch, lo, hi):
    # objective M (ξ − ρ) λ is linear in λ
    return np.where((m_mass > 0) & (switch < 0), hi, lo)


def minimize_hamiltonian_pointwise(state, adjoints, params: NodeParams, costs: CostFunctions,
                                   lam_bounds=None, gamma_bounds=None):
    """Per-node (λ*, δ*, γ*) minimising the Hamiltonian at one instant."""
    x = _as_x(state)
    kappa, rho, xi = np.asarray(adjoints, dtype=float)
    H, M, S = x
    Q = 1.0 - H - M - S
    lam_lo, lam_hi = lam_bounds if lam_bounds is not None else params.bounds("lam")
    g_lo, g_hi = gamma_bounds if gamma_bounds is not None else params.bounds("gamma")
    lam = _lambda_argmin(M, M * (xi - rho), lam_lo, lam_hi)
    delta = _delta_argmin(S, xi, params.delta_lo, params.delta_hi, costs)
    gamma = _gamma_argmin(Q, kappa, g_lo, g_hi, costs)
    return lam, delta, gamma


def _step_argmin(traj: StateTrajectory, adj: AdjointTrajectory, params: NodeParams, costs: CostFunctions):
    """Minimise the step-averaged Hamiltonian on every grid step at once.

    The trapezoid average of S_i·[φ(δ) − ξ_i δ] over a step equals
    S̄·φ(δ) − (Sξ)‾·δ, so an effective ξ = (Sξ)‾ / S̄ reduces it to the
    pointwise problem; likewise for γ.
    """
    x0, x1 = traj.x[:-1], traj.x[1:]
    y0, y1 = adj.y[:-1], adj.y[1:]
    q0, q1 = 1.0 - x0.sum(axis=1), 1.0 - x1.sum(axis=1)
    M_bar = 0.5 * (x0[:, 1] + x1[:, 1])
    S_bar = 0.5 * (x0[:, 2] + x1[:, 2])
    Q_bar = 0.5 * (q0 + q1)
    switch = 0.5 * (x0[:, 1] * (y0[:, 2] - y0[:, 1]) + x1[:, 1] * (y1[:, 2] - y1[:, 1]))
    with np.errstate(divide="ignore", invalid="ignore"):
        xi_eff = np.where(S_bar > 0, 0.5 * (x0[:, 2] * y0[:, 2] + x1[:, 2] * y1[:, 2]) / S_bar, 0.0)
        kappa_eff = np.where(Q_bar > 0, 0.5 * (q0 * y0[:, 0] + q1 * y1[:, 0]) / Q_bar, 0.0)
    lam = _lambda_argmin(M_bar, switch, params.lam_lo, params.lam_hi)
    delta = _delta_argmin(S_bar, xi_eff, params.delta_lo, params.delta_hi, costs)
    gamma = _gamma_argmin(Q_bar, kappa_eff, params.gamma_lo, params.gamma_hi, costs)
    return lam, delta, gamma


# --- service floor ------------------------------------------------------------

def floor_scale(state, delta, gamma, weights, U_n: float, h: float) -> float:
    """Largest factor s in [0, 1] keeping the Euler-predicted utility >= U_n."""
    x = _as_x(state)
    w = np.asarray(weights, dtype=float)
    S = x[2]
    Q = 1.0 - x.sum(axis=0)
    U = w.sum()
    base = float(w @ Q - h * (w @ (gamma * Q)))
    push = float(h * (w @ (delta * S)))
    budget = U - U_n
    if base + push <= budget:
        return 1.0
    if push <= 0 or base >= budget:
        return 0.0
    return float(np.clip((budget - base) / push, 0.0, 1.0))


def project_service_floor(controls, state, snapshot, U_n: float, h: float):
    """Scale every δ_i by a common factor so U(t+h) >= U_n under an Euler step.

    Returns ``((λ, δ, γ), factor)``.
    """
    lam, delta, gamma = (np.asarray(c, dtype=float) for c in controls)
    weights = snapshot.service_weights if isinstance(snapshot, GraphSnapshot) else snapshot
    s = floor_scale(state, delta, gamma, weights, U_n, h)
    return (lam, s * delta, gamma), s


def forward_with_floor(problem: ControlProblem, control: ControlTrajectory, bisect_iters: int = 40):
    """Integrate while shrinking δ on any step whose RK4 result would dip below U_n."""
    integ = problem.integrator
    grid = problem.grid
    w, U_n = problem.weights, problem.U_n
    applied = control.copy()
    xs = np.empty((grid.size, 3, problem.n))
    x = problem.E0.as_array()
    xs[0] = x
    lo, hi, renorm = 0.0, 1.0, 0

    def utility(z):
        return float(w @ z.sum(axis=0))

    for k in range(grid.size - 1):
        h = grid[k + 1] - grid[k]
        lam, delta, gamma = applied.lam[k], applied.delta[k], applied.gamma[k]
        a = integ.adjacency[k]
        s = floor_scale(x, delta, gamma, w, U_n, h)
        y = rk4_step(x, h, lam, s * delta, gamma, a, problem.params)
        if utility(y) < U_n and s > 0:
            s_lo, s_hi = 0.0, s
            y_lo = rk4_step(x, h, lam, 0.0 * delta, gamma, a, problem.params)
            if utility(y_lo) >= U_n:
                for _ in range(bisect_iters):
                    mid = 0.5 * (s_lo + s_hi)
                    if utility(rk4_step(x, h, lam, mid * delta, gamma, a, problem.params)) >= U_n:
                        s_lo = mid
                    else:
                        s_hi = mid
            s = s_lo
            y = rk4_step(x, h, lam, s * delta, gamma, a, problem.params)
        if s < 1.0:
            applied.delta[k] = s * delta
        if not np.all(np.isfinite(y)):
            raise IntegrationError(f"non-finite state at step {k}", step=k)
        q = 1.0 - y.sum(axis=0)
        lo = min(lo, float(y.min()), float(q.min()))
        hi = max(hi, float(y.max()), float(q.max()))
        x, changed = clamp_state(y)
        renorm += changed
        xs[k + 1] = x
    return StateTrajectory(grid.copy(), xs, lo, hi, renorm), applied


# --- sweep ----------------------------------------------------------------------

@dataclass
class SweepResult:
    control: ControlTrajectory
    states: StateTrajectory
    adjoints: AdjointTrajectory
    impact: ImpactBreakdown
    log: list[dict]
    converged: bool
    iterations: int

    @property
    def warning(self) -> str | None:
        return None if self.converged else "sweep did not converge; best iterate returned"

    def summary(self) -> dict:
        return {"iterations": self.iterations, "converged": self.converged,
                "impact": self.impact.to_dict(), "warning": self.warning}


def _apply_fixed_lambda(problem: ControlProblem, control: ControlTrajectory) -> ControlTrajectory:
    if problem.fixed_lambda is not None:
        control = control.copy()
        control.lam[:] = problem.fixed_lambda
    return control


def _clip_to_bounds(problem: ControlProblem, control: ControlTrajectory) -> ControlTrajectory:
    p = problem.params
    return ControlTrajectory(control.grid,
                             np.clip(control.lam, p.lam_lo, p.lam_hi),
                             np.clip(control.delta, p.delta_lo, p.delta_hi),
                             np.clip(control.gamma, p.gamma_lo, p.gamma_hi))


def forward_backward_sweep(problem: ControlProblem, initial_control: ControlTrajectory | None = None,
                           settings: SweepSettings | None = None) -> SweepResult:
    """Alternate forward states, backward costates and relaxed control updates.

    Stops once the largest control change drops below ``settings.tol``.
    The returned control is the lowest-impact iterate seen; every iterate
    has passed through the service-floor projection.
    """
    settings = settings or SweepSettings()
    if initial_control is None:
        initial_control = ControlTrajectory.at_bounds(problem.grid, problem.params, "lo")
    if initial_control.steps != problem.grid.size - 1:
        raise DomainError("initial control does not match the problem grid")
    pr, costs = problem.params, problem.costs
    theta = settings.relaxation

    control = _apply_fixed_lambda(problem, _clip_to_bounds(problem, initial_control))
    traj, control = forward_with_floor(problem, control)
    impact = impact_components(traj, control, pr, costs)
    best = (impact, control, traj)
    history = []
    converged = False
    it = 0
    for it in range(1, settings.max_iters + 1):
        adj = integrate_adjoint(problem, traj, control)
        lam, delta, gamma = _step_argmin(traj, adj, pr, costs)
        target = ControlTrajectory(problem.grid, lam, delta, gamma)
        target = _apply_fixed_lambda(problem, target)
        blended = ControlTrajectory.from_stacked(
            problem.grid, theta * target.stacked() + (1.0 - theta) * control.stacked())
        new_traj, new_control = forward_with_floor(problem, blended)
        new_impact = impact_components(new_traj, new_control, pr, costs)
        change = float(np.max(np.abs(new_control.stacked() - control.stacked())))
        if settings.adaptive and new_impact.I > impact.I + 1e-12 * max(1.0, abs(impact.I)):
            theta = max(settings.min_relaxation, 0.5 * theta)
        control, traj, impact = new_control, new_traj, new_impact
        if impact.I < best[0].I:
            best = (impact, control, traj)
        history.append({"iteration": it, "impact": impact.I, "best_impact": best[0].I,
                        "change": change, "relaxation": theta})
        if change < settings.tol:
            converged = True
            break
    impact, control, traj = best
    adj = integrate_adjoint(problem, traj, control)
    if not converged:
        log.warning("forward-backward sweep stopped after %d iterations without converging", it)
    return SweepResult(control, traj, adj, impact, history, converged, it)


# --- gradient check -------------------------------------------------------------

def _as_stacked(direction, shape) -> np.ndarray:
    d = direction.stacked() if isinstance(direction, ControlTrajectory) else np.asarray(direction, dtype=float)
    if d.shape != shape:
        raise DomainError(f"direction has shape {d.shape}, expected {shape}")
    return d


def gradient_check(problem: ControlProblem, control: ControlTrajectory, direction, h: float = 1e-5):
    """Adjoint-predicted vs central-difference directional derivative of I."""
    w = control.stacked()
    d = _as_stacked(direction, w.shape)
    p = problem.params
    lo = np.stack([np.broadcast_to(p.lam_lo, w.shape[1:]), np.broadcast_to(p.delta_lo, w.shape[1:]),
                   np.broadcast_to(p.gamma_lo, w.shape[1:])])
    hi = np.stack([np.broadcast_to(p.lam_hi, w.shape[1:]), np.broadcast_to(p.delta_hi, w.shape[1:]),
                   np.broadcast_to(p.gamma_hi, w.shape[1:])])
    for sign in (1.0, -1.0):
        v = w + sign * h * d
        if np.any(v < lo - 1e-12) or np.any(v > hi + 1e-12):
            raise DomainError("perturbed control leaves the feasible box")
    traj = problem.forward(control)
    adj = integrate_adjoint(problem, traj, control)
    g0 = control_gradient(traj.x[:-1], adj.y[:-1], control.lam, control.delta, control.gamma, problem.costs)
    g1 = control_gradient(traj.x[1:], adj.y[1:], control.lam, control.delta, control.gamma, problem.costs)
    hs = np.diff(problem.grid)[None, :, None]
    predicted = float((0.5 * hs * (g0 + g1) * d).sum())
    plus = problem.impact(ControlTrajectory.from_stacked(control.grid, w + h * d)).I
    minus = problem.impact(ControlTrajectory.from_stacked(control.grid, w - h * d)).I
    return predicted, (plus - minus) / (2.0 * h)
