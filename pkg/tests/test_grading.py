import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aptrepair.epidemic import ExpectedState, NodeParams
from aptrepair.errors import ConfigurationError, DomainError
from aptrepair.grading import (GradeInputs, PeriodValues, _sweep_node, modulated_bounds, neighbor_pressure,
                               recovery_grade, threat_grade)
from aptrepair.topology import TopologySchedule, generate_small_world
from oracles import literal_grading_sweep

PHI = (1 + math.sqrt(5)) / 2


def adj(n, edges):
    a = np.zeros((n, n), dtype=int)
    for i, j in edges:
        a[i, j] = a[j, i] = 1
    return a


P4 = adj(4, [(0, 1), (1, 2), (2, 3)])
C4 = adj(4, [(0, 1), (1, 2), (2, 3), (3, 0)])
HOUSE = adj(5, [(0, 1), (1, 2), (2, 3), (3, 0), (0, 4), (1, 4)])
C5 = adj(5, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)])


def state(rows):
    H, M, S = np.array(rows, dtype=float).T
    return ExpectedState(H, M, S)


# --- fixtures --------------------------------------------------------------------
#
# Threshold matrix 0.1·A − 0.4·I is symmetric, so its spectral radius is
# 0.4 − 0.1·μ_min(A). Utility is normalised by U.

PATH_STATE = state([[0.6, 0.2, 0.1], [1.0, 0.0, 0.0], [0.8, 0.1, 0.0], [0.9, 0.0, 0.0]])
PATH_PARAMS = NodeParams.uniform(4, alpha=0.1, beta=0.1, delta=(0.1, 0.4))


def path_inputs(periods):
    sched = TopologySchedule.from_intervals([(k, k + 1) for k in range(len(periods))], periods)
    return GradeInputs(0.0, PATH_STATE, sched, np.ones(4), U_n=1.5)


def path_initial_scores():
    # infected mass M+S = (0.3, 0, 0.1, 0); neighbour pressures on the path
    base = [0.1 + 0.1 * 0.0, 0.1 + 0.1 * (0.3 + 0.1), 0.1 + 0.1 * (0.0 + 0.0), 0.1 + 0.1 * 0.1]
    # each node sums its neighbours' pressures; a path has no triangles so the
    # worst-case neighbour bump adds nothing
    return np.array([base[1], base[0] + base[2], base[1] + base[3], base[2]])


def test_path_initial_scores_by_hand():
    np.testing.assert_allclose(path_initial_scores(), [0.14, 0.2, 0.25, 0.1], atol=1e-15)


def test_trg_path_two_periods():
    # budget 2·3/2 = 3: after the forced first step, stepping back from period 1
    # would need 2 more iterations with only 1 left, so every node walks forward
    g = threat_grade(path_inputs([P4, C4]), PATH_PARAMS)
    s = path_initial_scores()
    assert g.j == 2
    np.testing.assert_allclose(g.scores, s, atol=1e-15)
    np.testing.assert_allclose(g.grades, s / (0.25 + 0.2), atol=1e-15)
    assert g.order.tolist() == [2, 1, 0, 3]
    assert g.iterations.tolist() == [2, 2, 2, 2] and g.backtracks.tolist() == [0, 0, 0, 0]


def test_trg_path_three_periods():
    # periods P4, C4, P4; budget 6. Removing node 1 (or 2):
    #   P4 − {1} = K1 + K2   -> (0.4 + 0.1, 2/4)
    #   C4 − {1} = P3        -> (0.4 + 0.1·√2, 3/4)
    # iter 1 k=0 forced forward
    # iter 2 k=1: Δρ = 0.1·√2 − 0.1, ΔZ = 0.25, ρ-part − Z-part < 0 -> back (room 4 >= 3)
    # iter 3 k=0: add ½Δρ + ½ΔZ, forced forward
    # iter 4 k=1: add again, fails, room 2 < 3 -> forward
    # iter 5 k=2: add again, Δρ < 0 and ΔZ < 0 with ½(−Δρ) − ½(−ΔZ) > 0 -> forward
    # Removing node 0 (or 3) gives P3 in every period: no change, one empty backtrack.
    g = threat_grade(path_inputs([P4, C4, P4]), PATH_PARAMS)
    add = 3 * (0.5 * (0.1 * math.sqrt(2) - 0.1) + 0.5 * 0.25)
    s = path_initial_scores() + np.array([0.0, add, add, 0.0])
    np.testing.assert_allclose(g.scores, s, atol=1e-12)
    top = s[2] + s[1]
    np.testing.assert_allclose(g.grades, s / top, atol=1e-12)
    assert g.iterations.tolist() == [5, 5, 5, 5]
    assert g.backtracks.tolist() == [1, 1, 1, 1]


HOUSE_STATE = state([[0.7, 0.2, 0.1], [0.9, 0.1, 0.0], [0.2, 0.0, 0.1], [1.0, 0.0, 0.0], [0.3, 0.0, 0.0]])
HOUSE_PARAMS = NodeParams.uniform(5, alpha=0.1, beta=0.05, delta=(0.1, 0.4))
HOUSE_WEIGHTS = np.array([1.0, 2.0, 3.0, 4.0, 5.0])


def house_inputs(**kw):
    sched = TopologySchedule.from_intervals([(0, 1), (1, 2), (2, 3)], [HOUSE, C5, HOUSE])
    return GradeInputs(0.0, HOUSE_STATE, sched, HOUSE_WEIGHTS, U_n=9.0, **kw)


def house_initial_scores():
    # infected mass (0.3, 0.1, 0.1, 0, 0); house neighbours 0:{1,3,4} 1:{0,2,4} 2:{1,3} 3:{0,2} 4:{0,1}
    b = [0.05 + 0.1 * 0.1, 0.05 + 0.1 * 0.4, 0.05 + 0.1 * 0.1, 0.05 + 0.1 * 0.4, 0.05 + 0.1 * 0.4]
    s = [b[1] + b[3] + b[4], b[0] + b[2] + b[4], b[1] + b[3], b[0] + b[2], b[0] + b[1]]
    # betweenness (1.5, 1.5, 0.5, 0.5, 0) ranks (3, 4, 1, 2, 0); weight ranks (0..4)
    # importance (3, 5, 3, 5, 4). Worst-case neighbour per node: 0->1, 1->4, 2->1, 3->0, 4->1.
    # Making w compromised adds α(1 − inf_w) to the pressure of w's neighbours;
    # a node gains it for each of its neighbours that is also adjacent to w.
    s[0] += 0.1 * 0.9   # neighbour 4 is adjacent to 1
    s[1] += 0.1 * 1.0   # neighbour 0 is adjacent to 4
    s[4] += 0.1 * 0.9   # neighbour 0 is adjacent to 1
    return np.array(s)


def test_house_initial_scores_by_hand():
    np.testing.assert_allclose(house_initial_scores(), [0.36, 0.31, 0.18, 0.12, 0.24], atol=1e-15)


def test_rrg_house_fixture():
    # quarantined {2, 4}; isolated reference: house − {2,4} = P3 on (0,1,3)
    # Re-admitting 2 (removed {4}): house−{4} = C4 (ρ 0.6), C5−{4} = P4 (ρ 0.4 + 0.1φ), Z = 10/15 throughout
    #   iter 2 k=1: ΔZ = 0 > Δρ < 0  -> forward
    #   iter 3 k=2: Δρ > 0 = ΔZ -> back (room 3 >= 2), ε = Δρ
    #   iter 4 k=1: add ½ε, forward;  iter 5 k=2: add ½ε, fails, no room -> forward
    # Re-admitting 4 (removed {2}): house−{2} = paw, C5−{2} = P4, Z = 12/15 throughout
    #   iter 2 k=1: Δρ = ρ(P4) − ρ(paw) > 0 -> back (room 4 >= 3)
    #   iters 3, 4, 5 each add ½Δρ; iter 5 sees Δρ < 0 and moves on
    paw_min = min(np.roots([1, 0, -4, -2, 1]).real)
    rho_paw = 0.4 - 0.1 * paw_min
    rho_p4 = 0.4 + 0.1 * PHI
    s = house_initial_scores()
    s2 = s[2] + 2 * 0.5 * (0.6 - rho_p4)
    s4 = s[4] + 3 * 0.5 * (rho_p4 - rho_paw)
    g = recovery_grade(house_inputs(), [4, 2], HOUSE_PARAMS)
    assert g.candidates.tolist() == [2, 4]
    np.testing.assert_allclose(g.scores[[2, 4]], [s2, s4], atol=1e-12)
    np.testing.assert_allclose(g.grades, [0, 0, s2 / (s2 + s4), 0, s4 / (s2 + s4)], atol=1e-12)
    assert g.iterations[[2, 4]].tolist() == [5, 5] and g.backtracks[[2, 4]].tolist() == [1, 1]


def test_paw_polynomial():
    from aptrepair.topology import spectral_radius
    keep = [0, 1, 3, 4]
    m = 0.1 * HOUSE[np.ix_(keep, keep)] - 0.4 * np.eye(4)
    assert spectral_radius(m) == pytest.approx(0.4 - 0.1 * min(np.roots([1, 0, -4, -2, 1]).real), abs=1e-12)


# --- examples ------------------------------------------------------------------------

def test_neighbor_pressure_examples():
    p = NodeParams.uniform(2, alpha=0.1, beta=0.1)
    assert neighbor_pressure(0, ExpectedState.uniform(1), np.zeros((1, 1)), NodeParams.uniform(1, beta=0.1), 1.0) == 0
    s = ExpectedState(np.array([0.5, 1.0]), np.array([0.3, 0.0]), np.array([0.2, 0.0]))
    assert neighbor_pressure(1, s, adj(2, [(0, 1)]), p, 1.0) == pytest.approx(0.1)
    s = ExpectedState(np.array([1.0, 0.5]), np.array([0.0, 0.3]), np.array([0.0, 0.2]))
    # node 1's only neighbour is node 0, whose pressure is β + α·(M1 + S1) = 0.15
    assert neighbor_pressure(1, s, adj(2, [(0, 1)]), p, 1.0) == pytest.approx(0.15)
    assert neighbor_pressure(0, ExpectedState(np.array([1.0, 1.0, 0.5]), np.array([0.0, 0.0, 0.3]),
                                              np.array([0.0, 0.0, 0.2])),
                             adj(3, [(0, 1), (1, 2)]), NodeParams.uniform(3, alpha=0.1, beta=0.1), 1.0) == \
        pytest.approx(0.15)


def complete_inputs(n=6, periods=1, **kw):
    k = np.ones((n, n), dtype=int) - np.eye(n, dtype=int)
    sched = TopologySchedule.from_intervals([(i, i + 1) for i in range(periods)], [k] * periods)
    return GradeInputs(0.0, ExpectedState.uniform(n, 0.7, 0.2, 0.1), sched, np.full(n, 10.0), U_n=35.0, **kw)


def test_complete_graph_symmetry():
    p = NodeParams.uniform(6, alpha=0.1, beta=0.1, delta=(0.1, 0.4))
    g = threat_grade(complete_inputs(), p)
    assert g.j == 2
    assert np.allclose(g.scores, g.scores[0])
    assert g.order[:2].tolist() == [0, 1]
    np.testing.assert_allclose(g.grades[g.order[:2]], [0.5, 0.5], atol=1e-15)


def test_single_quarantined_node():
    p = NodeParams.uniform(6, alpha=0.1, beta=0.1, delta=(0.1, 0.4))
    g = recovery_grade(complete_inputs(periods=3), [3], p)
    assert g.grades[3] == 1.0 and g.grades.sum() == 1.0


def test_two_symmetric_quarantined_nodes():
    sched = TopologySchedule.from_intervals([(0, 1), (1, 2)], [C4, C4])
    inputs = GradeInputs(0.0, ExpectedState.uniform(4, 0.6, 0.3, 0.0), sched, np.ones(4), U_n=2.0)
    g = recovery_grade(inputs, [0, 2], NodeParams.uniform(4, alpha=0.1, beta=0.1, delta=(0.1, 0.4)))
    np.testing.assert_allclose(g.grades[[0, 2]], [0.5, 0.5], atol=1e-15)


def test_no_backtracks_equals_forward_walk():
    g0 = threat_grade(path_inputs([P4, C4, P4]).__class__(**{**path_inputs([P4, C4, P4]).__dict__,
                                                              "max_backtracks": 0}), PATH_PARAMS)
    np.testing.assert_allclose(g0.scores, path_initial_scores(), atol=1e-15)
    assert g0.iterations.tolist() == [3] * 4 and g0.backtracks.tolist() == [0] * 4


def test_errors():
    with pytest.raises(ConfigurationError):
        threat_grade(GradeInputs(0.0, PATH_STATE, TopologySchedule.from_intervals([(0, 1)], [P4]), np.ones(4),
                                 U_n=3.5), PATH_PARAMS)
    with pytest.raises(DomainError):
        recovery_grade(path_inputs([P4]), [], PATH_PARAMS)
    with pytest.raises(DomainError):
        GradeInputs(0.0, PATH_STATE, TopologySchedule.from_intervals([(0, 1)], [P4]), np.ones(4), U_n=4.0)


def test_modulated_bounds():
    hi = np.full(4, 0.6)
    np.testing.assert_allclose(modulated_bounds(0.1, hi, [0.25] * 4), [0.6] * 4)
    np.testing.assert_allclose(modulated_bounds(0.1, hi, [0.0, 0.1, 1.0, 0.05]), [0.3, 0.42, 0.6, 0.36])
    np.testing.assert_allclose(modulated_bounds(0.35, hi, [0.0] * 4), [0.35] * 4)


# --- properties ------------------------------------------------------------------------

@st.composite
def grading_case(draw):
    n = draw(st.integers(5, 12))
    periods = draw(st.integers(1, 5))
    seed = draw(st.integers(0, 2**31))
    rng = np.random.default_rng(seed)
    mats = [generate_small_world(n, 2 if n < 6 else 4, 0.4, seed + k) for k in range(periods)]
    sched = TopologySchedule.from_intervals([(k, k + 1) for k in range(periods)], mats)
    x = rng.dirichlet(np.ones(4), size=n).T[:3]
    w = rng.random(n) + 0.01
    # keep at least one node inside the loss budget (U − U_n) / (U / n)
    frac = draw(st.floats(0.5, 1.0 - 1.0 / n))
    k_start = draw(st.integers(0, periods - 1))
    p = NodeParams.uniform(n, alpha=rng.uniform(0, 0.3, n), beta=rng.uniform(0, 0.3, n),
                           delta=(np.full(n, 0.1), rng.uniform(0.1, 0.5, n)))
    inputs = GradeInputs(float(k_start), ExpectedState.from_array(x), sched, w, U_n=frac * w.sum(),
                         k_start=k_start, worst_case=draw(st.booleans()))
    return inputs, p, rng


@settings(max_examples=40, deadline=None)
@given(grading_case())
def test_budget_determinism_normalisation(case):
    inputs, p, rng = case
    n = inputs.n
    span = len(inputs.schedule) - inputs.k_start
    g = threat_grade(inputs, p)
    assert np.all(g.iterations <= span * (span + 1) // 2)
    assert np.all(g.iterations <= n * (n + 1) // 2)
    assert abs(g.grades[g.order[:g.j]].sum() - 1.0) < 1e-12
    assert np.all(g.grades >= 0)
    again = threat_grade(inputs, p)
    assert np.array_equal(g.grades, again.grades) and np.array_equal(g.order, again.order)
    q = sorted(rng.choice(n, size=int(rng.integers(1, n)), replace=False).tolist())
    r = recovery_grade(inputs, q, p)
    assert abs(r.grades[q].sum() - 1.0) < 1e-12
    assert np.all(r.grades[np.setdiff1d(np.arange(n), q)] == 0)
    assert np.all(r.iterations <= span * (span + 1) // 2)
    assert np.array_equal(r.grades, recovery_grade(inputs, q, p).grades)


@settings(max_examples=25, deadline=None)
@given(grading_case())
def test_label_equivariance(case):
    # with the worst-case bump off no index-based tie-break touches the scores
    inputs, p, rng = case
    inputs = GradeInputs(inputs.t, inputs.state, inputs.schedule, inputs.weights, inputs.U_n, k_start=inputs.k_start,
                         worst_case=False)
    n = inputs.n
    perm = rng.permutation(n)
    inv = np.argsort(perm)
    sched = TopologySchedule.from_intervals(inputs.schedule.intervals,
                                            [s.adjacency[np.ix_(perm, perm)] for s in inputs.schedule.segments])
    x = inputs.state.as_array()[:, perm]
    fields = {k: getattr(p, k)[perm] for k in p.__dataclass_fields__}
    pp = NodeParams(**fields)
    permuted = GradeInputs(inputs.t, ExpectedState.from_array(x), sched, inputs.weights[perm], inputs.U_n,
                           k_start=inputs.k_start, worst_case=False)
    a = threat_grade(inputs, p)
    b = threat_grade(permuted, pp)
    np.testing.assert_allclose(b.scores, a.scores[perm], rtol=1e-10, atol=1e-13)
    q = [0, n - 1]
    ra = recovery_grade(inputs, q, p)
    rb = recovery_grade(permuted, [int(inv[0]), int(inv[n - 1])], pp)
    np.testing.assert_allclose(rb.grades, ra.grades[perm], rtol=1e-10, atol=1e-13)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 7), st.integers(0, 2**31), st.sampled_from([1.0, -1.0]))
def test_sweep_matches_literal_loop(K, seed, sign):
    rng = np.random.default_rng(seed)
    periods = [tuple(v) for v in rng.random((K, 2))]
    prev0 = tuple(rng.random(2))
    got = _sweep_node(0.3, 0, K, lambda k: periods[k], prev0, sign, 0.5, 0.5, None)
    want, iters, _ = literal_grading_sweep(0.3, periods, prev0, 0.5, 0.5, sign)
    assert got[0] == pytest.approx(want, abs=1e-14)
    assert got[1] == iters


def test_period_values_cached():
    pv = PeriodValues(path_inputs([P4, C4]).schedule, PATH_PARAMS, np.ones(4))
    a = pv(1, frozenset({2}))
    assert pv(1, frozenset({2})) == a and len(pv._memo) == 1
    assert a == pytest.approx((0.4 + 0.1 * math.sqrt(2), 0.75))
