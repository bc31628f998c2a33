import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from shadowlab.chain import (
    BoxCover,
    Digraph,
    approximate_by_periodic_orbit,
    attractors,
    build_transition_graph,
    chain_recurrent_set,
    check_conley_identity,
    check_transitive_iff_no_proper_attractor,
    hausdorff_distance,
    invariant_part,
    is_chain_transitive,
    isolated_part,
    minimal_attractors,
    omega_limit,
    strongly_connected_components,
    viable_set,
)
from shadowlab.flow import Chart, SmoothSystem
from shadowlab.systems import default_region, make, pendulum_energy


@st.composite
def graphs(draw, max_nodes=6):
    n = draw(st.integers(1, max_nodes))
    pairs = [(a, b) for a in range(n) for b in range(n)]
    edges = draw(st.lists(st.sampled_from(pairs), max_size=3 * n, unique=True))
    return n, edges


def _small_graphs(n_max):
    for n in range(1, n_max + 1):
        pairs = [(a, b) for a in range(n) for b in range(n)]
        for mask in range(1 << len(pairs)):
            yield n, [p for k, p in enumerate(pairs) if mask >> k & 1]


# ---- finite digraphs -----------------------------------------------------------


def test_two_cycle_is_recurrent():
    g = Digraph.from_edges(2, [(0, 1), (1, 0)])
    assert chain_recurrent_set(g).tolist() == [0, 1]
    assert is_chain_transitive(g)


def test_path_into_self_loop():
    g = Digraph.from_edges(2, [(0, 1), (1, 1)])
    assert chain_recurrent_set(g).tolist() == [1]
    chk = check_conley_identity(g)
    assert chk.holds and chk.intersection.tolist() == [1]


def test_transitivity_examples():
    cycle = Digraph.from_edges(3, [(0, 1), (1, 2), (2, 0)])
    two = Digraph.from_edges(4, [(0, 1), (1, 0), (2, 3), (3, 2)])
    assert is_chain_transitive(cycle)
    assert not is_chain_transitive(two)
    t = check_transitive_iff_no_proper_attractor(cycle)
    assert (t.chain_transitive, t.has_proper_attractor, t.consistent) == (True, False, True)
    sink = Digraph.from_edges(2, [(0, 0), (0, 1), (1, 1)])
    t = check_transitive_iff_no_proper_attractor(sink)
    assert (t.chain_transitive, t.has_proper_attractor, t.consistent) == (False, True, True)


def test_exhaustive_three_nodes():
    for n, edges in _small_graphs(3):
        g = Digraph.from_edges(n, edges)
        M = oracles.adjacency(n, edges)
        cr, inter, atts = oracles.conley_oracle(n, edges)
        chk = check_conley_identity(g)
        assert set(chain_recurrent_set(g).tolist()) == cr == oracles.closed_walk_nodes(M)
        assert chk.holds and set(chk.intersection.tolist()) == inter
        assert {frozenset(r.boxes.tolist()) for r in attractors(g)} == atts
        assert is_chain_transitive(g) == oracles.strongly_connected(M, range(n))


@given(graphs())
def test_random_graphs_against_oracles(ng):
    n, edges = ng
    g = Digraph.from_edges(n, edges)
    M = oracles.adjacency(n, edges)
    cr, inter, atts = oracles.conley_oracle(n, edges)
    assert set(chain_recurrent_set(g).tolist()) == cr
    assert set(viable_set(g).tolist()) == oracles.viable_nodes(M)
    assert set(invariant_part(g, range(n)).tolist()) == oracles.invariant_nodes(M, range(n))
    assert {frozenset(r.boxes.tolist()) for r in attractors(g)} == atts
    chk = check_conley_identity(g)
    assert chk.holds and set(chk.intersection.tolist()) == inter
    assert check_transitive_iff_no_proper_attractor(g).consistent


@given(graphs(), st.data())
def test_omega_limit_matches_long_walks(ng, data):
    n, edges = ng
    B = data.draw(st.lists(st.integers(0, n - 1), min_size=1, max_size=n, unique=True))
    succ = oracles._masks(n, edges)
    U = sum(1 << b for b in B)
    assert set(omega_limit(Digraph.from_edges(n, edges), B).tolist()) == oracles._bits(oracles.omega(succ, U, n))
    pred = oracles._masks(n, [(b, a) for a, b in edges])
    assert set(omega_limit(Digraph.from_edges(n, edges), B, reverse=True).tolist()) == \
        oracles._bits(oracles.omega(pred, U, n))


@given(graphs())
def test_attractor_records_are_consistent(ng):
    n, edges = ng
    g = Digraph.from_edges(n, edges)
    via = set(viable_set(g).tolist())
    for r in attractors(g):
        A = set(r.boxes.tolist())
        assert A <= set(r.neighborhood.tolist())
        assert not A & set(r.dual.tolist())
        assert all(b in A for a, b in edges if a in A and b in via)


def test_escaping_nodes_drop_attractors():
    g = Digraph.from_edges(3, [(0, 1), (1, 1), (0, 2), (2, 2)], escaping=[2])
    assert [set(r.boxes.tolist()) for r in attractors(g)] == [{1}]
    assert isolated_part(g).tolist() == [1]


def test_empty_region_rejected():
    g = Digraph.from_edges(2, [(0, 1)])
    with pytest.raises(ValueError):
        is_chain_transitive(g, [])
    with pytest.raises(ValueError):
        omega_limit(g, [])


# ---- Hausdorff distance ----------------------------------------------------------


def brute_hausdorff(A, B):
    d = lambda p, q: math.dist(p, q)
    return max(max(min(d(a, b) for b in B) for a in A), max(min(d(a, b) for a in A) for b in B))


def test_hausdorff_examples():
    A = np.array([[0.0, 0.0], [1.0, 2.0]])
    assert hausdorff_distance(A, A) == 0.0
    assert hausdorff_distance([0.0], [0.0, 3.0]) == 3.0
    with pytest.raises(ValueError):
        hausdorff_distance(np.zeros((0, 2)), A)


pts = st.lists(st.tuples(st.floats(-10, 10), st.floats(-10, 10)), min_size=1, max_size=20)


@given(pts, pts, pts)
def test_hausdorff_against_double_loop(A, B, C):
    h = hausdorff_distance(A, B)
    assert h == pytest.approx(brute_hausdorff(A, B), abs=1e-12)
    assert h == pytest.approx(hausdorff_distance(B, A), abs=1e-12)
    assert h <= hausdorff_distance(A, C) + hausdorff_distance(C, B) + 1e-9


def test_hausdorff_on_torus():
    ch = Chart.torus([1.0, 1.0])
    assert hausdorff_distance([[0.05, 0.5]], [[0.95, 0.5]], ch) == pytest.approx(0.1)


# ---- box covers and transition graphs ------------------------------------------------


def test_box_cover_tiles_region():
    cov = BoxCover.for_system(make("pendulum"), *default_region("pendulum"), 3)
    assert cov.size == 64
    assert cov.diameter == pytest.approx(math.hypot(2 * math.pi / 8, 6 / 8))
    C = cov.centers()
    assert np.array_equal(cov.index_of(C), np.arange(64))
    rng = np.random.default_rng(0)
    P = cov.lo + (cov.hi - cov.lo) * rng.random((500, 2))
    idx = cov.index_of(P)
    assert np.all(np.abs(P - cov.centers(idx)) <= cov.widths / 2 + 1e-12)


def test_zero_field_has_only_self_edges():
    sys = SmoothSystem("zero", Chart.euclidean(2), lambda x: np.zeros_like(x),
                       lambda x: np.zeros(x.shape + (2,)))
    cov = BoxCover.for_system(sys, [-1, -1], [1, 1], 3)
    g = build_transition_graph(sys, cov, delta_fat=cov.diameter / 2)
    C = g.centers()
    for a, b in g.graph.edges():
        # an image within half a diameter of box b means the boxes touch
        assert np.all(np.abs(C[a] - C[b]) <= cov.widths + 1e-12)
    assert all(a in g.graph.succ[a] for a in range(g.n))
    assert len(chain_recurrent_set(g)) == g.n


def test_linear_sink_edges_do_not_move_outward():
    sys = make("linear", matrix=[[-1.0, 0.0], [0.0, -1.0]])
    cov = BoxCover.for_system(sys, [-1, -1], [1, 1], 4)
    g = build_transition_graph(sys, cov)
    r = np.linalg.norm(g.centers(), axis=1)
    slack = 2 * cov.diameter
    assert all(r[b] <= r[a] + slack for a, b in g.graph.edges())
    mins = minimal_attractors(g, isolated_part(g))
    assert len(mins) == 1
    assert cov.index_of([[0.0, 0.0]])[0] in g.nodes[mins[0].boxes]


def test_gradient_attractor_per_sink():
    sys = make("gradient_morse_smale")
    cov = BoxCover.for_system(sys, *default_region("gradient_morse_smale"), 4)
    g = build_transition_graph(sys, cov)
    mins = minimal_attractors(g)
    assert len(mins) == 1
    sink = cov.index_of([[math.pi + 1e-9, math.pi + 1e-9]])[0]
    assert sink in g.nodes[mins[0].boxes]


def test_edge_count_reproducible():
    sys = make("pendulum")
    cov = BoxCover.for_system(sys, *default_region("pendulum"), 6)
    a = build_transition_graph(sys, cov, samples=12, seed=4)
    b = build_transition_graph(sys, cov, samples=12, seed=4)
    assert a.graph.edge_count == b.graph.edge_count
    assert a.graph.succ == b.graph.succ


def test_transition_graph_validation():
    sys = make("pendulum")
    cov = BoxCover.for_system(sys, *default_region("pendulum"), 3)
    with pytest.raises(ValueError):
        build_transition_graph(sys, cov, t_step=0.5)
    with pytest.raises(ValueError):
        build_transition_graph(sys, cov, delta_fat=cov.diameter / 4)


def test_periodic_approximation_on_pendulum_loop():
    sys = make("pendulum")
    cov = BoxCover.for_system(sys, *default_region("pendulum"), 5)
    g = build_transition_graph(sys, cov)
    H = pendulum_energy(g.centers())
    region = np.nonzero(np.abs(H - 0.5) < 0.25)[0]
    sub, labels = g.graph.induced(region)
    comps = [labels[c] for c in strongly_connected_components(sub)]
    big = max(comps, key=len)
    res = approximate_by_periodic_orbit(sys, g, big)
    assert res.orbit is not None
    assert res.dH < 2 * cov.diameter


def test_periodic_approximation_rejects_sink_region():
    sys = make("linear", matrix=[[-1.0, 0.0], [0.0, -1.0]])
    cov = BoxCover.for_system(sys, [-1, -1], [1, 1], 3)
    g = build_transition_graph(sys, cov)
    with pytest.raises(ValueError):
        approximate_by_periodic_orbit(sys, g, [0, cov.size - 1])


def test_omega_limit_examples():
    # 0 -> 1 -> 2 (self-loop at 2); 3 <-> 4 cycle fed by 5
    g = Digraph.from_edges(6, [(0, 1), (1, 2), (2, 2), (3, 4), (4, 3), (5, 3)])
    assert omega_limit(g, [0, 1]).tolist() == [2]
    assert omega_limit(g, [3]).tolist() == [3, 4]
    assert omega_limit(g, [5]).tolist() == [3, 4]
    # backward walks may idle at 2 and then step to 1 and 0 arbitrarily late
    assert omega_limit(g, [2], reverse=True).tolist() == [0, 1, 2]
    assert omega_limit(g, [3], reverse=True).tolist() == [3, 4, 5]
