import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from shadowlab.flow import integrate
from shadowlab.hyperbolicity import (
    CriticalOrbit,
    NonHyperbolicError,
    bump_family,
    check_index_constancy,
    check_sectional_expansion,
    detect_intersection,
    estimate_splitting,
    find_critical_orbits,
    local_manifold,
    morse_index,
    orbits_json,
    sampled_strong_homogeneity,
)
from shadowlab.periodic import toral_periodic_orbits
from shadowlab.pseudo_orbit import InsufficientDataError
from shadowlab.systems import default_region, make, pendulum_energy, suspension_period

CAT = [[2, 1], [1, 1]]

nonzero = st.floats(0.05, 5.0).flatmap(lambda v: st.sampled_from([v, -v]))


def primitive_orbit_counts(matrix, k_max):
    """Orbits of exact period k from |det(A^k - I)| by Mobius inversion over divisors."""
    A = np.array(matrix, dtype=object)
    fix = {}
    P = np.eye(2, dtype=object)
    for k in range(1, k_max + 1):
        P = P.dot(A)
        B = P - np.eye(2, dtype=object)
        fix[k] = abs(B[0, 0] * B[1, 1] - B[0, 1] * B[1, 0])

    def mobius(n):
        out, p = 1, 2
        while p * p <= n:
            if n % p == 0:
                n //= p
                if n % p == 0:
                    return 0
                out = -out
            p += 1
        return -out if n > 1 else out

    return [sum(mobius(k // d) * fix[d] for d in range(1, k + 1) if k % d == 0) // k for k in range(1, k_max + 1)]


# ---- Morse index --------------------------------------------------------------


def test_morse_index_examples():
    assert morse_index(CriticalOrbit.from_spectrum("singularity", [-1.0, 2.0])) == 1
    assert morse_index(CriticalOrbit.from_spectrum("singularity", [-1.0, -3.0])) == 2
    assert morse_index(CriticalOrbit.from_spectrum("singularity", [1.0, 3.0])) == 0
    assert morse_index(CriticalOrbit.from_spectrum("periodic", [1.0, 0.5, 2.0])) == 1
    assert morse_index(CriticalOrbit.from_spectrum("periodic", [0.2, 1.0, 0.5])) == 2


def test_nonhyperbolic_names_multiplier():
    with pytest.raises(NonHyperbolicError, match="multiplier 1"):
        morse_index(CriticalOrbit.from_spectrum("periodic", [1.0, 1.0, 2.0]))
    with pytest.raises(NonHyperbolicError, match="multiplier 0"):
        morse_index(CriticalOrbit.from_spectrum("singularity", [0.0, -2.0]))
    o = CriticalOrbit.from_spectrum("singularity", [0.0, -2.0])
    assert not o.hyperbolic and o.index is None


@given(st.lists(nonzero, min_size=1, max_size=6))
def test_reversal_swaps_index(vals):
    o = CriticalOrbit.from_spectrum("singularity", vals)
    assert morse_index(o) + morse_index(o.reversed()) == len(vals)


@given(st.lists(st.floats(0.05, 0.9) | st.floats(1.1, 20.0), min_size=1, max_size=5))
def test_periodic_reversal_swaps_index(vals):
    o = CriticalOrbit.from_spectrum("periodic", [1.0] + vals)
    assert morse_index(o) + morse_index(o.reversed()) == len(vals)


def test_index_constancy():
    saddle = CriticalOrbit.from_spectrum("periodic", [1.0, 0.5, 2.0])
    sink = CriticalOrbit.from_spectrum("periodic", [1.0, 0.5, 0.3])
    rep = check_index_constancy([saddle, saddle, saddle])
    assert rep.constant and rep.indices == {1: 3}
    assert not check_index_constancy([saddle, sink]).constant
    with pytest.raises(InsufficientDataError):
        check_index_constancy([])


# ---- critical orbits ----------------------------------------------------------------


def test_cat_map_orbit_counts():
    counts = [sum(1 for k, _ in toral_periodic_orbits(CAT, 8) if k == j) for j in range(1, 9)]
    assert counts == [1, 2, 5, 10, 24, 50, 120, 270]
    assert counts == primitive_orbit_counts(CAT, 8)


def test_pendulum_singularities():
    sys = make("pendulum")
    res = find_critical_orbits(sys, default_region("pendulum"), grid=8)
    pts = sorted((round(o.base[0], 6), round(o.base[1], 6), o.index) for o in res.orbits)
    assert pts == [(0.0, 0.0, None), (round(math.pi, 6), 0.0, 1)]


def test_linear_and_lorenz_singularities():
    lin = make("linear", matrix=[[-2.0, 0.0], [0.0, 1.0]])
    res = find_critical_orbits(lin, default_region("linear"), grid=4)
    assert len(res.orbits) == 1 and np.allclose(res.orbits[0].base, 0.0)
    lor = make("lorenz")
    res = find_critical_orbits(lor, default_region("lorenz"), grid=6)
    r = math.sqrt(8 / 3 * 27)
    want = sorted([(0.0, 0.0, 0.0), (r, r, 27.0), (-r, -r, 27.0)])
    got = sorted(tuple(o.base) for o in res.orbits)
    assert np.allclose(got, want, atol=1e-8)
    # origin: two contracting directions; C+-: one real contracting, an unstable complex pair
    assert sorted(o.index for o in res.orbits) == [1, 1, 2]


def test_suspension_orbits_have_index_one():
    sys = make("suspended_toral_automorphism", matrix=CAT)
    tau = suspension_period(CAT)
    seeds = [(np.append(u, 0.5), k * tau) for k, u in toral_periodic_orbits(CAT, 3)]
    res = find_critical_orbits(sys, default_region("suspended_toral_automorphism", 3), grid=0,
                               periodic_seeds=seeds, merge=0.0)
    assert len(res.orbits) == 8
    assert all(o.index == 1 for o in res.orbits)
    assert all(abs(o.multipliers[o.flow_index] - 1) < 1e-6 for o in res.orbits)
    assert '"index": 1' in orbits_json(res.orbits)


# ---- splitting rates --------------------------------------------------------------


def test_zero_field_splitting_inconclusive():
    from test_shadowing import zero_field

    est = estimate_splitting(zero_field(), ([0.1, 0.2], 20.0), 1)
    assert not est.conclusive and est.lambda_contract is None


def test_splitting_validation():
    sys = make("pendulum")
    with pytest.raises(ValueError):
        estimate_splitting(sys, ([0.1, 0.2], 5.0), 1)
    with pytest.raises(ValueError):
        estimate_splitting(sys, ([0.1, 0.2], 20.0), 2)


def test_lorenz_contraction():
    sys = make("lorenz")
    x = integrate(sys, [1.0, 1.0, 20.0], 10.0).final
    est = estimate_splitting(sys, (x, 20.0), 1, seed=1)
    assert est.conclusive
    assert est.lambda_contract > 0 and est.r2["contract"] > 0.9


def test_sectional_rates():
    sys = make("linear", matrix=[[-1.0, 0.0], [0.0, 2.0]])
    rec = check_sectional_expansion(sys, ([0.3, 0.6], 20.0), np.eye(2), planes=10)
    assert all(abs(r - 1.0) <= 0.05 for r in rec.rates)
    with pytest.raises(ValueError):
        check_sectional_expansion(sys, ([0.3, 0.6], 20.0), np.eye(2)[:, :1])


# ---- manifolds ----------------------------------------------------------------------


def test_linear_stable_manifold_on_axis():
    sys = make("linear", matrix=[[-2.0, 0.0], [0.0, 1.0]])
    o = CriticalOrbit.singularity([0.0, 0.0], sys.jac(np.zeros(2)))
    disk = local_manifold(sys, o, "stable", 0.5, 20, 5.0)
    assert np.abs(disk.samples[:, 1]).max() < 1e-6
    assert np.abs(disk.samples[:, 0]).max() <= 0.5
    un = local_manifold(sys, o, "unstable", 0.5, 20, 5.0)
    assert np.abs(un.samples[:, 0]).max() < 1e-6
    pts = detect_intersection(sys, disk, un, tol=1e-4, span=2.0)
    assert len(pts) == 0 or np.abs(pts).max() < 1e-3


def test_pendulum_unstable_manifold_energy():
    sys = make("pendulum")
    o = CriticalOrbit.singularity([math.pi, 0.0], sys.jac(np.array([math.pi, 0.0])))
    disk = local_manifold(sys, o, "unstable", 0.5, 40, 10.0)
    assert np.abs(pendulum_energy(disk.samples) - 1.0).max() < 1e-5
    with pytest.raises(ValueError):
        local_manifold(sys, o, "sideways", 0.5)


def test_center_has_no_manifold():
    sys = make("pendulum")
    o = CriticalOrbit.singularity([0.0, 0.0], sys.jac(np.zeros(2)))
    with pytest.raises(NonHyperbolicError):
        local_manifold(sys, o, "stable", 0.5)


def test_intersection_is_symmetric():
    sys = make("pendulum")
    o = CriticalOrbit.singularity([math.pi, 0.0], sys.jac(np.array([math.pi, 0.0])))
    st_ = local_manifold(sys, o, "stable", 0.5, 30, 10.0)
    un = local_manifold(sys, o, "unstable", 0.5, 30, 10.0)
    a = detect_intersection(sys, st_, un)
    b = detect_intersection(sys, un, st_)
    assert len(a) == len(b) > 0
    assert np.abs(pendulum_energy(a) - 1.0).max() < 1e-4
    with pytest.raises(ValueError):
        detect_intersection(sys, st_, st_)


# ---- homogeneity ------------------------------------------------------------------


def test_suspension_family_homogeneous():
    sys = make("suspended_toral_automorphism", matrix=CAT)
    region = default_region("suspended_toral_automorphism", 3)
    tau = suspension_period(CAT)
    seeds = [(np.append(u, 0.5), k * tau) for k, u in toral_periodic_orbits(CAT, 2)]
    fam = [sys] + bump_family(sys, region, count=2, seed=1)
    rep = sampled_strong_homogeneity(fam, region, 1, periodic_seeds=seeds)
    assert rep.homogeneous and rep.orbit_counts == (3, 3, 3)


def test_mixed_family_not_homogeneous():
    fam = [make("linear", matrix=[[-1.0, 0.0], [0.0, -2.0]]), make("linear", matrix=[[-1.0, 0.0], [0.0, 2.0]])]
    rep = sampled_strong_homogeneity(fam, default_region("linear"), 1, grid=3, kinds=("singularity",))
    assert not rep.homogeneous and rep.observed_indices == {2: 1, 1: 1}
    with pytest.raises(InsufficientDataError):
        sampled_strong_homogeneity([], default_region("linear"), 1)


def test_sink_has_no_unstable_disk():
    sys = make("linear", matrix=[[-1.0, 0.0], [0.0, -2.0]])
    o = CriticalOrbit.singularity([0.0, 0.0], sys.jac(np.zeros(2)))
    with pytest.raises(ValueError, match="single point"):
        local_manifold(sys, o, "unstable", 0.5)


def test_lorenz_sectional_expansion():
    sys = make("lorenz")
    x = integrate(sys, [1.0, 1.0, 20.0], 10.0).final
    # flow direction plus the unstable direction, approximated by the two leading axes of the frame
    rec = check_sectional_expansion(sys, (x, 20.0), np.eye(3)[:, :2], planes=6, seed=2)
    assert rec.worst_rate > 0


def test_suspension_fixed_fiber_orbit():
    sys = make("suspended_toral_automorphism", matrix=CAT)
    tau = suspension_period(CAT)
    eig = max(abs(np.linalg.eigvals(np.array(CAT, dtype=float))))
    assert tau == pytest.approx(math.log(eig))
    res = find_critical_orbits(sys, default_region("suspended_toral_automorphism", 3), grid=0,
                               periodic_seeds=[(np.array([0.0, 0.0, 0.5]), tau)])
    (o,) = res.orbits
    assert o.period == pytest.approx(tau, rel=1e-8)
    assert sorted(abs(o.multipliers)) == pytest.approx(sorted([1 / eig, 1.0, eig]))
