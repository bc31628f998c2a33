import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from shadowlab.flow import Chart, SmoothSystem
from shadowlab.pseudo_orbit import EscapeError, InsufficientDataError, PseudoOrbit, linear_pseudo_orbit, orbit_samples
from shadowlab.shadowing import (
    NoCandidateError,
    OrbitTrack,
    Reparametrization,
    SegmentCosts,
    aggregate,
    align,
    asymptotic_statistic,
    average_statistic,
    bottleneck_path,
    linear_shadow_oracle,
    search_shadowing_orbit,
    segment_costs,
    shadow_report,
    sup_statistic,
)
from shadowlab.systems import make


def zero_field(n=2):
    return SmoothSystem("zero", Chart.euclidean(n), lambda x: np.zeros_like(x),
                        lambda x: np.zeros(x.shape + (x.shape[-1],)))


def scaled(sys, c):
    f, J = sys.field, sys.jacobian
    return SmoothSystem(f"{c}x{sys.name}", sys.chart, lambda x: c * f(x), lambda x: c * J(x))


@pytest.fixture(scope="module")
def pend():
    return make("pendulum")


# ---- reparametrizations ------------------------------------------------------


def test_reparametrization_invariants():
    with pytest.raises(ValueError):
        Reparametrization([0.0, 1.0, 1.0], [0.0, 1.0, 2.0])
    with pytest.raises(ValueError):
        Reparametrization([-1.0, 1.0], [-1.0, 1.0])
    with pytest.raises(ValueError):
        Reparametrization([0.0, 1.0], [0.5, 1.0])
    h = Reparametrization([-2.0, 0.0, 1.0], [-1.0, 0.0, 2.0])
    assert h(np.array([-4.0, -1.0, 0.5, 3.0])) == pytest.approx([-2.0, -0.5, 1.0, 6.0])


@given(st.lists(st.floats(0.01, 3.0), min_size=1, max_size=6), st.lists(st.floats(0.01, 3.0), min_size=1, max_size=6))
def test_reparametrization_is_increasing(dt, du):
    k = min(len(dt), len(du))
    t = np.concatenate([[0.0], np.cumsum(dt[:k])])
    u = np.concatenate([[0.0], np.cumsum(du[:k])])
    h = Reparametrization(t, u)
    x = np.linspace(-5, t[-1] + 5, 200)
    assert np.all(np.diff(h(x)) > 0)
    assert h(np.array([0.0]))[0] == 0.0


# ---- bottleneck lattice path -------------------------------------------------


@given(arrays(np.int64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=st.integers(0, 3)))
def test_bottleneck_matches_enumeration(M):
    M = M.astype(float)
    opt, moves, nodes = bottleneck_path(M)
    assert (opt, moves) == oracles.brute_bottleneck(M)
    assert nodes[-1, 1] == M.shape[1] - 1


@given(arrays(np.float64, st.tuples(st.integers(2, 20), st.integers(2, 20)), elements=st.floats(0, 10)))
def test_bottleneck_matches_threshold_search(M):
    assert bottleneck_path(M)[0] == oracles.threshold_bottleneck(M)


def test_bottleneck_forbidden_cells():
    M = np.array([[0.0, np.inf], [np.inf, 0.0]])
    assert bottleneck_path(M)[1] == "D"
    with pytest.raises(ValueError):
        bottleneck_path(np.array([[0.0, np.inf]]))


def test_bottleneck_prefers_diagonal_on_ties():
    assert bottleneck_path(np.zeros((3, 3)))[1] == "DD"


# ---- alignment ---------------------------------------------------------------


def test_align_exact_orbit_is_identity(pend):
    x = np.array([0.4, 0.3])
    po = orbit_samples(pend, x, -3, 6)
    h = align(pend, po, x, grid=8)
    step = 1.0 / 8
    assert np.max(np.abs(h.u - h.t)) < step
    assert h.cost < 1e-6


def test_align_double_speed_orbit(pend):
    x = np.array([0.4, 0.3])
    po = orbit_samples(pend, x, 0, 6)
    track = OrbitTrack.from_point(scaled(pend, 2.0), x, -1.0, 10.0)
    h = align(pend, po, track, grid=8)
    step = 6 / (6 * 8)
    assert np.max(np.abs(h.u - h.t / 2)) < step
    # orbit nodes are step/2 apart in the fast orbit's time, i.e. step apart along the original flow
    speed = np.linalg.norm(pend.f(po.points), axis=1).max()
    assert h.cost <= step * speed


def test_align_respects_neighborhood(pend):
    po = orbit_samples(pend, [0.4, 0.3], 0, 4)
    with pytest.raises(EscapeError):
        align(pend, po, [0.4, 0.3], neighborhood=([-0.1, -0.1], [0.1, 0.1]))


# ---- statistics ---------------------------------------------------------------


def test_exact_orbit_all_statistics(pend):
    x = np.array([0.5, 0.3])
    po = orbit_samples(pend, x, -8, 8)
    for kind in ("sup", "average", "limit_tail", "asymptotic_average"):
        assert shadow_report(kind, pend, po, x).value < 1e-5


def test_zero_field_constant_shift():
    sys = zero_field()
    pts = np.tile([1.0, 2.0], (21, 1))
    po = PseudoOrbit(pts, 1.0, -10)
    c = np.array([0.75, -1.0])
    assert sup_statistic(sys, po, pts[0] + c) == 1.25
    assert average_statistic(sys, po, pts[0] + c) == pytest.approx(1.25, abs=1e-14)
    rep = asymptotic_statistic(sys, po, pts[0] + c, tol=1.0)
    assert rep.passed is False
    # (1/n) sum_{i=0}^{n} of a constant c over the last quarter of n = 1..9
    assert rep.value == pytest.approx(1.25 * 8 / 7)


def _costs(integrals, i_min):
    idx = np.arange(i_min, i_min + len(integrals))
    return SegmentCosts(idx, np.asarray(integrals, dtype=float), np.asarray(integrals, dtype=float), 8)


def test_cesaro_spike():
    v = np.zeros(101)
    v[1] = 1.0
    value, tail, _ = aggregate("average", _costs(v, 0))
    assert value <= 1 / 25
    assert tail["forward_averages"][-1] == pytest.approx(1 / 100)


def test_asymptotic_single_spike():
    v = np.zeros(201)
    v[100] = 1.0
    value, tail, passed = aggregate("asymptotic_average", _costs(v, -100), tol=0.05)
    assert passed
    assert tail["forward_averages"] == pytest.approx(1.0 / np.arange(1, 101))


def test_asymptotic_needs_symmetric_window():
    with pytest.raises(InsufficientDataError):
        aggregate("asymptotic_average", _costs(np.zeros(10), 0))


def brute_average(vals, i_min):
    """Worst running mean over the last quarter of window sizes, forward from i=1 and backward from i=-1."""
    idx = list(range(i_min, i_min + len(vals)))
    sides = [[v for i, v in zip(idx, vals) if i >= 1], [v for i, v in zip(idx, vals) if i < 0][::-1]]
    out = []
    for side in sides:
        if len(side) >= 4:
            means = [sum(side[:n]) / n for n in range(1, len(side) + 1)]
            q = math.ceil(len(means) / 4)
            out.append(max(means[-q:]))
    return max(out)


@given(st.lists(st.floats(0, 5), min_size=8, max_size=40), st.integers(0, 6))
def test_aggregate_matches_recomputation(vals, back):
    i_min = -min(back, len(vals) - 5)
    costs = _costs(vals, i_min)
    assert aggregate("sup", costs)[0] == max(vals)
    assert aggregate("average", costs)[0] == pytest.approx(brute_average(vals, i_min), rel=1e-12, abs=1e-12)


def test_report_matches_per_segment(pend):
    x = np.array([0.5, 0.3])
    po = orbit_samples(pend, x, -6, 6)
    y = x + [1e-3, 0.0]
    rep = shadow_report("average", pend, po, y)
    costs = segment_costs(pend, po, y)
    assert rep.value == aggregate("average", costs)[0]
    assert np.array_equal(rep.per_segment, costs.integrals)


def test_time_shift_equivariance(pend):
    x = np.array([0.5, 0.3])
    po = orbit_samples(pend, x, 0, 8)
    y = x + [2e-3, -1e-3]
    a = segment_costs(pend, po, y)
    shifted = orbit_samples(pend, po.points[2], 0, 6)
    b = segment_costs(pend, shifted, OrbitTrack.from_point(pend, y, -1, 12).evaluate(2.0)[0])
    assert b.integrals == pytest.approx(a.integrals[2:], abs=1e-8)


def test_report_serialization(pend, tmp_path):
    x = np.array([0.5, 0.3])
    po = orbit_samples(pend, x, -4, 4)
    rep = shadow_report("limit_tail", pend, po, x)
    rep.to_csv(tmp_path / "seg.csv")
    rep.tail_csv(tmp_path / "tail.csv")
    assert len((tmp_path / "seg.csv").read_text().splitlines()) == len(po) + 1
    assert rep.to_json() == rep.to_json()


# ---- search and oracle -------------------------------------------------------


def test_search_recovers_exact_orbit(pend):
    x = np.array([0.5, 0.3])
    po = orbit_samples(pend, x, -5, 5)
    res = search_shadowing_orbit(pend, po, candidate_seeds=2)
    assert res.report.value < 1e-4


def test_search_no_candidate(pend):
    po = orbit_samples(pend, [0.5, 0.3], 0, 5)
    with pytest.raises(NoCandidateError):
        search_shadowing_orbit(pend, po, candidate_seeds=1, newton=False,
                               neighborhood=([5.0, 5.0], [6.0, 6.0]))


def test_linear_oracle_is_true_orbit():
    A = np.array([[-2.0, 0.0], [0.0, 1.0]])
    po = linear_pseudo_orbit(A, 40, 1e-3, seed=1, i_min=-20)
    y, kappa = linear_shadow_oracle(A, po)
    M = np.diag(np.exp(np.diag(A)))
    assert np.allclose(y[1:], y[:-1] @ M.T, atol=1e-14)
    # closed form for a diagonal saddle: sum e^{-2k} (k >= 0) + sum e^{-k} (k >= 1)
    assert kappa == pytest.approx(1 / (1 - math.exp(-2)) + math.exp(-1) / (1 - math.exp(-1)), rel=1e-12)
    assert np.max(np.linalg.norm(y - po.points, axis=1)) <= kappa * 1e-3


def test_linear_search_below_oracle_bound():
    A = [[-2.0, 0.0], [0.0, 1.0]]
    sys = make("linear", matrix=A)
    po = linear_pseudo_orbit(A, 60, 1e-3, seed=3, i_min=-30)
    _, kappa = linear_shadow_oracle(A, po)
    res = search_shadowing_orbit(sys, po, candidate_seeds=1)
    assert res.report.value < 10 * 1e-3 * kappa
