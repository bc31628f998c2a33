import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from shadowlab.flow import (
    Chart,
    ChartMismatchError,
    SmoothSystem,
    StepControl,
    Trajectory,
    distance,
    divergence,
    flow_map,
    integrate,
    integrate_variational,
    trajectory_from_csv,
    trajectory_to_csv,
)
from shadowlab.systems import make, pendulum_energy

coord = st.floats(-50, 50, allow_nan=False)


def zero_field(n=2):
    return SmoothSystem("zero", Chart.euclidean(n), lambda x: np.zeros_like(x),
                        lambda x: np.zeros(x.shape + (x.shape[-1],)))


def test_distance_examples():
    assert distance([0.0, 0.0], [3.0, 4.0]) == pytest.approx(5.0)
    assert distance([0.1], [0.9], Chart.torus([1.0])) == pytest.approx(0.2)
    a = np.array([0.3, -1.2])
    assert distance(a, a) == 0.0


def test_distance_dimension_mismatch():
    with pytest.raises(ChartMismatchError):
        distance([0.0, 1.0], [0.0, 1.0, 2.0])


@given(st.lists(st.tuples(coord, coord), min_size=3, max_size=3))
def test_torus_metric_axioms(pts):
    ch = Chart.torus([2 * math.pi, None])
    a, b, c = (np.array(p) for p in pts)
    dab = float(ch.distance(a, b))
    assert dab >= 0
    assert dab == pytest.approx(float(ch.distance(b, a)), abs=1e-9)
    assert dab <= float(ch.distance(a, c)) + float(ch.distance(c, b)) + 1e-9
    assert float(ch.distance(a, a)) == pytest.approx(0.0, abs=1e-9)


@given(st.floats(-30, 30), st.floats(-30, 30))
def test_torus_canonical_form(x, y):
    ch = Chart.torus([1.0, 2.0])
    c = ch.canonicalize(np.array([x, y]))
    assert 0 <= c[0] < 1 and 0 <= c[1] < 2
    assert float(ch.distance(c, [x, y])) == pytest.approx(0.0, abs=1e-9)


def test_mapping_torus_gluing():
    ch = Chart.mapping_torus([[2, 1], [1, 1]])
    u = np.array([0.2, 0.7])
    top = np.append(u, 1.0)
    bottom = np.append(np.array([[2, 1], [1, 1]]) @ u % 1.0, 0.0)
    assert float(ch.distance(top, bottom)) == pytest.approx(0.0, abs=1e-12)


def test_mapping_torus_rejects_non_unimodular():
    with pytest.raises(ValueError):
        Chart.mapping_torus([[2, 0], [0, 1]])


def test_exponential_decay():
    sys = make("linear", matrix=[[-1.0, 0.0], [0.0, -1.0]])
    end = integrate(sys, [1.0, 0.0], 1.0).final
    assert end == pytest.approx([math.exp(-1), 0.0], abs=1e-6)


def test_zero_field_fixed():
    x0 = np.array([0.4, -2.0])
    assert integrate(zero_field(), x0, 10.0).final == pytest.approx(x0)


def test_pendulum_energy_conserved():
    sys = make("pendulum")
    traj = integrate(sys, [0.5, 1.1], 20.0)
    H = pendulum_energy(traj.points)
    assert np.ptp(H) < 1e-6


def test_backward_integration_order():
    sys = make("pendulum")
    traj = integrate(sys, [0.5, 0.2], -3.0)
    assert np.all(np.diff(traj.times) > 0)
    assert traj.initial == pytest.approx([0.5, 0.2])
    fwd = integrate(sys, traj.final, 3.0).final
    assert float(sys.chart.distance(fwd, [0.5, 0.2])) < 1e-7


def test_samples_on_base_step():
    traj = integrate(make("pendulum"), [0.1, 0.1], 2.0)
    assert np.max(np.diff(traj.times)) <= traj.step_control.base_step + 1e-12
    with pytest.raises(ValueError):
        Trajectory(np.array([0.0, 0.0]), np.zeros((2, 2)), StepControl(), Chart.euclidean(2), 1.0)


def test_resampling_reproduces_trajectory():
    sys = make("lorenz")
    traj = integrate(sys, [1.0, 1.0, 20.0], 2.0)
    again = flow_map(sys, np.repeat(traj.points[:1], len(traj), 0), traj.times)
    assert np.max(np.linalg.norm(again - traj.points, axis=1)) < 1e-5


@given(st.floats(0.0, 3.0), st.floats(0.0, 3.0))
def test_flow_property(s, t):
    sys = make("pendulum")
    x = np.array([0.7, -0.4])
    direct = flow_map(sys, x, s + t)[0]
    split = flow_map(sys, flow_map(sys, x, s)[0], t)[0]
    assert float(sys.chart.distance(direct, split)) < 1e-7


def test_variational_linear_closed_form():
    sys = make("linear", matrix=[[-2.0, 0.0], [0.0, 1.0]])
    cyc = integrate_variational(sys, [0.3, 0.4], 1.0)
    assert cyc.derivative(len(cyc.base) - 1) == pytest.approx(np.diag([math.exp(-2), math.e]), abs=1e-5)
    assert cyc.derivative(0) == pytest.approx(np.eye(2))


def test_variational_zero_span_is_identity():
    cyc = integrate_variational(make("lorenz"), [1.0, 2.0, 3.0], 0.0)
    assert cyc.derivative(0) == pytest.approx(np.eye(3))


def test_cocycle_on_lorenz():
    sys = make("lorenz")
    x = integrate(sys, [1.0, 1.0, 20.0], 5.0).final
    c2 = integrate_variational(sys, x, 2.0)
    D2 = c2.derivative(len(c2.base) - 1)
    c1 = integrate_variational(sys, x, 1.0)
    y = c1.base.final
    D1 = c1.derivative(len(c1.base) - 1)
    c1b = integrate_variational(sys, y, 1.0)
    D1b = c1b.derivative(len(c1b.base) - 1)
    rel = np.linalg.norm(D2 - D1b @ D1) / np.linalg.norm(D2)
    assert rel < 1e-4


def test_divergence_examples():
    lin = make("linear", matrix=[[-2.0, 0.0], [0.0, 1.0]])
    P = np.random.default_rng(0).normal(size=(20, 2))
    assert divergence(lin, P) == pytest.approx(-np.ones(20))
    assert np.abs(divergence(make("pendulum"), P)).max() == 0.0
    L = np.random.default_rng(1).normal(size=(20, 3)) * 10
    assert divergence(make("lorenz"), L) == pytest.approx(np.full(20, -41 / 3))


def test_trajectory_csv_round_trip(tmp_path):
    traj = integrate(make("pendulum"), [0.2, 0.3], 1.0)
    path = tmp_path / "traj.csv"
    trajectory_to_csv(traj, path)
    assert path.read_text().splitlines()[0] == "t,x0,x1"
    back = trajectory_from_csv(path)
    assert np.array_equal(back.points, traj.points)
    assert np.array_equal(back.times, traj.times)


def test_step_control_validation():
    with pytest.raises(ValueError):
        StepControl(tol=0)
    with pytest.raises(ValueError):
        StepControl(scheme="euler")
