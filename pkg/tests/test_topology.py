import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aptrepair.errors import DomainError
from aptrepair.topology import (GraphSnapshot, TopologySchedule, betweenness, epidemic_threshold, generate_schedule,
                                generate_small_world, is_connected, k_shell, network_utility, read_edge_list,
                                ring_lattice, spectral_radius, write_edge_list)
from oracles import betweenness_bruteforce, char_poly_radius, kcore_bruteforce


def small_connected_graphs():
    """Every connected graph with at most six nodes, one per isomorphism class."""
    out = []
    for g in nx.graph_atlas_g():
        if 1 <= g.number_of_nodes() <= 6 and nx.is_connected(g):
            out.append(nx.to_numpy_array(g, dtype=int))
    return out


CATALOGUE = small_connected_graphs()


def path(n):
    a = np.zeros((n, n), dtype=int)
    for i in range(n - 1):
        a[i, i + 1] = a[i + 1, i] = 1
    return a


def complete(n):
    return np.ones((n, n), dtype=int) - np.eye(n, dtype=int)


def star(leaves):
    a = np.zeros((leaves + 1, leaves + 1), dtype=int)
    a[0, 1:] = a[1:, 0] = 1
    return a


@st.composite
def adjacency(draw, max_n=8):
    n = draw(st.integers(2, max_n))
    bits = draw(st.lists(st.booleans(), min_size=n * (n - 1) // 2, max_size=n * (n - 1) // 2))
    a = np.zeros((n, n), dtype=int)
    a[np.triu_indices(n, 1)] = bits
    return a + a.T


def test_catalogue_size():
    # 1 + 1 + 2 + 6 + 21 + 112 connected graphs on 1..6 nodes
    assert len(CATALOGUE) == 143


class TestSchedule:
    def test_single_segment(self):
        a = complete(3)
        s = TopologySchedule.from_intervals([(0, 6)], [a])
        assert np.array_equal(s.adjacency_at(3), a)

    def test_boundary_goes_right(self):
        a1, a2 = complete(3), path(3)
        s = TopologySchedule.from_intervals([(0, 2), (2, 3)], [a1, a2])
        assert np.array_equal(s.adjacency_at(2), a2)
        assert np.array_equal(s.adjacency_at(3), a2)
        assert np.array_equal(s.adjacency_at(1.999), a1)

    def test_setting3_lookup(self):
        iv = [(0, 2), (2, 5), (5, 6), (6, 9), (9, 11), (11, 12)]
        s = generate_schedule("general", 12, iv, seed=1)
        assert s.segment_index(10) == 4
        assert np.array_equal(s.adjacency_at(10), s.segments[4].adjacency)

    @pytest.mark.parametrize("t", [-0.1, 6.01])
    def test_outside_horizon(self, t):
        s = TopologySchedule.from_intervals([(0, 6)], [complete(3)])
        with pytest.raises(DomainError):
            s.adjacency_at(t)

    def test_dict_round_trip(self):
        s = generate_schedule("periodic", 8, [(0, 2), (2, 3), (3, 4), (4, 6)], seed=5)
        back = TopologySchedule.from_dict(s.to_dict())
        assert back.intervals == s.intervals
        assert all(np.array_equal(a.adjacency, b.adjacency) for a, b in zip(s.segments, back.segments))

    @given(t=st.floats(0, 12))
    def test_piecewise_constant(self, t):
        iv = [(0, 2), (2, 5), (5, 6), (6, 9), (9, 11), (11, 12)]
        s = generate_schedule("general", 8, iv, seed=2)
        k = s.segment_index(t)
        t0, t1 = iv[k]
        assert t0 <= t and (t < t1 or (t == 12 and k == 5))


class TestKShell:
    def test_cycle(self):
        a = path(4)
        a[0, 3] = a[3, 0] = 1
        assert k_shell(a).tolist() == [2, 2, 2, 2]

    def test_star(self):
        assert k_shell(star(3)).tolist() == [1, 1, 1, 1]

    def test_k4_with_pendant_path(self):
        a = np.zeros((6, 6), dtype=int)
        a[:4, :4] = complete(4)
        a[3, 4] = a[4, 3] = a[4, 5] = a[5, 4] = 1
        assert k_shell(a).tolist() == [3, 3, 3, 3, 1, 1]

    def test_catalogue(self):
        for a in CATALOGUE:
            assert k_shell(a).tolist() == kcore_bruteforce(a)


class TestBetweenness:
    def test_path(self):
        assert betweenness(path(3)).tolist() == [0, 1, 0]

    def test_triangle(self):
        assert betweenness(complete(3)).tolist() == [0, 0, 0]

    def test_star_center(self):
        assert betweenness(star(3))[0] == pytest.approx(3.0)

    def test_catalogue(self):
        for a in CATALOGUE:
            np.testing.assert_allclose(betweenness(a), betweenness_bruteforce(a), atol=1e-12)


class TestSpectral:
    def test_examples(self):
        assert spectral_radius([[0, 1], [1, 0]]) == pytest.approx(1.0)
        assert spectral_radius(np.diag([2.0, -3.0])) == pytest.approx(3.0)
        assert spectral_radius(complete(3)) == pytest.approx(2.0)

    def test_non_square(self):
        with pytest.raises(DomainError):
            spectral_radius(np.ones((2, 3)))

    def test_catalogue_polynomial_roots(self):
        for a in CATALOGUE:
            if a.shape[0] <= 4:
                assert abs(spectral_radius(a) - char_poly_radius(a)) < 1e-8

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 4).flatmap(
        lambda n: st.lists(st.integers(-3, 3), min_size=n * n, max_size=n * n).map(
            lambda v: np.array(v, dtype=float).reshape(n, n))))
    def test_random_symmetric_vs_polynomial(self, m):
        s = m + m.T
        assert abs(spectral_radius(s) - char_poly_radius(s)) < 1e-8

    def test_threshold_examples(self):
        k3 = complete(3)
        assert epidemic_threshold([0.1] * 3, k3, [0.4] * 3) == pytest.approx(-0.2)
        assert epidemic_threshold([0.0] * 3, k3, [0.4] * 3) == pytest.approx(-0.4)

    def test_threshold_heterogeneous(self):
        lam, rec = np.array([0.1, 0.2, 0.3]), np.array([0.4, 0.1, 0.2])
        a = path(3)
        m = lam[:, None] * a - np.diag(rec)
        import sympy

        x = sympy.symbols("x")
        coeffs = [float(c) for c in sympy.Poly(sympy.Matrix(m.tolist()).charpoly(x).as_expr(), x).all_coeffs()]
        expected = max(np.roots(coeffs).real)
        assert epidemic_threshold(lam, a, rec) == pytest.approx(expected, abs=1e-10)

    def test_threshold_dimension_mismatch(self):
        with pytest.raises(DomainError):
            epidemic_threshold([0.1, 0.1], complete(3), [0.1] * 3)


class TestUtility:
    def test_examples(self):
        snap = GraphSnapshot(generate_small_world(10, 4, 0.1, 0), np.full(10, 100.0))
        assert network_utility(snap) == pytest.approx(1000.0)
        assert network_utility(snap, range(10)) == 0.0
        p3 = GraphSnapshot(path(3), np.ones(3))
        assert network_utility(p3, [1]) == pytest.approx(1.0)

    def test_component_mode_examples(self):
        snap = GraphSnapshot(generate_small_world(10, 4, 0.1, 0), np.full(10, 100.0))
        assert network_utility(snap, mode="component") == pytest.approx(1000.0)
        assert network_utility(snap, range(10), mode="component") == 0.0
        p3 = GraphSnapshot(path(3), np.ones(3))
        assert network_utility(p3, [1], mode="component") == pytest.approx(1.0)

    def test_lcc_share_can_rise_after_removal(self):
        # the weight-sum × component-share formula is not monotone: removing a
        # zero-weight node shrinks the denominator of the share
        snap = GraphSnapshot(path(3), np.array([0.0, 0.0, 10.0]))
        assert network_utility(snap, [1]) == pytest.approx(5.0)
        assert network_utility(snap, [0, 1]) == pytest.approx(10.0)
        assert network_utility(snap, [0, 1], mode="component") <= network_utility(snap, [1], mode="component")

    @settings(max_examples=60, deadline=None)
    @given(adjacency(), st.data())
    def test_component_mode_monotone_in_removed_set(self, a, data):
        n = a.shape[0]
        w = np.array(data.draw(st.lists(st.floats(0, 10), min_size=n, max_size=n)))
        snap = GraphSnapshot(a, w)
        order = data.draw(st.permutations(range(n)))
        values = [network_utility(snap, order[:k], mode="component") for k in range(n + 1)]
        assert all(values[k + 1] <= values[k] + 1e-9 for k in range(n))

    @settings(max_examples=60, deadline=None)
    @given(adjacency(), st.data())
    def test_lcc_mode_monotone_under_uniform_weights(self, a, data):
        # with equal weights the lcc formula reduces to w·|LCC|, which is monotone
        n = a.shape[0]
        snap = GraphSnapshot(a, np.full(n, 2.5))
        order = data.draw(st.permutations(range(n)))
        values = [network_utility(snap, order[:k]) for k in range(n + 1)]
        assert all(values[k + 1] <= values[k] + 1e-9 for k in range(n))


class TestGenerators:
    def test_ring_when_no_rewiring(self):
        assert np.array_equal(generate_small_world(12, 4, 0.0, 9), ring_lattice(12, 4))

    def test_deterministic(self):
        assert np.array_equal(generate_small_world(50, 4, 0.3, 11), generate_small_world(50, 4, 0.3, 11))

    def test_hundred_nodes(self):
        a = generate_small_world(100, 4, 0.1, 42)
        assert int(a.sum()) // 2 == 200
        assert is_connected(a)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(6, 40), st.sampled_from([2, 4]), st.floats(0, 1), st.integers(0, 2**32 - 1))
    def test_edge_count_preserved(self, n, k, p, seed):
        a = generate_small_world(n, k, p, seed)
        assert int(a.sum()) // 2 == n * k // 2
        assert np.array_equal(a, a.T) and not np.any(np.diag(a))

    def test_bad_degree(self):
        with pytest.raises(DomainError):
            generate_small_world(10, 3, 0.1, 0)

    def test_static(self):
        s = generate_schedule("static", 20, [(0, 2), (2, 12)], seed=0)
        assert s.n_distinct() == 1

    def test_periodic_setting2(self):
        iv = [(0, 2), (2, 3), (3, 4), (4, 6)]
        s = generate_schedule("periodic", 20, iv, seed=0, n_base=4)
        assert s.intervals == [(0.0, 2.0), (2.0, 3.0), (3.0, 4.0), (4.0, 6.0)]
        s2 = generate_schedule("periodic", 20, iv, seed=0, n_base=2)
        assert np.array_equal(s2.segments[0].adjacency, s2.segments[2].adjacency)

    def test_general_setting3(self):
        iv = [(0, 2), (2, 5), (5, 6), (6, 9), (9, 11), (11, 12)]
        s = generate_schedule("general", 30, iv, seed=0)
        assert s.n_distinct() == 6
        assert s.intervals == [(float(a), float(b)) for a, b in iv]

    def test_schedule_deterministic(self):
        iv = [(0, 2), (2, 5)]
        a = generate_schedule("general", 30, iv, seed=4)
        b = generate_schedule("general", 30, iv, seed=4)
        assert all(np.array_equal(x.adjacency, y.adjacency) for x, y in zip(a.segments, b.segments))

    @pytest.mark.parametrize("kind,iv", [("bogus", [(0, 1)]), ("static", []), ("static", [(1, 2)]),
                                         ("static", [(0, 1), (2, 3)])])
    def test_invalid_schedule_request(self, kind, iv):
        with pytest.raises(DomainError):
            generate_schedule(kind, 10, iv, seed=0)


def test_edge_list_round_trip():
    a = generate_small_world(15, 4, 0.2, 3)
    assert np.array_equal(read_edge_list(write_edge_list(a).splitlines(), 15), a)
