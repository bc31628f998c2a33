import math

import numpy as np
import pytest

from shadowlab.flow import divergence, flow_map
from shadowlab.systems import BuildError, SystemSpec, build_system, catalog, default_region, make, suspension_period


def test_catalog_lists_every_kind():
    kinds = [e["kind"] for e in catalog()]
    assert kinds == ["linear", "pendulum", "gradient_morse_smale", "lorenz",
                     "suspended_toral_automorphism", "custom_polynomial"]


def test_custom_polynomial_matches_hand_field():
    # x' = y, y' = -x - x^3
    terms = [[0, 1.0, 0, 1], [1, -1.0, 1, 0], [1, -1.0, 3, 0]]
    sys = make("custom_polynomial", dim=2, terms=terms)
    P = np.random.default_rng(0).normal(size=(10, 2))
    want = np.column_stack([P[:, 1], -P[:, 0] - P[:, 0] ** 3])
    assert sys.f(P) == pytest.approx(want)
    J = sys.jac(P)
    assert J[:, 1, 0] == pytest.approx(-1 - 3 * P[:, 0] ** 2)


def test_inconsistent_jacobian_rejected():
    with pytest.raises(BuildError, match="Jacobian"):
        make("custom_polynomial", dim=1, terms=[[0, 1.0, 2]], jacobian_terms=[[0, 0, 3.0, 1]])


def test_bad_parameters_rejected():
    with pytest.raises(BuildError):
        make("linear", matrix=[[1.0, 2.0]])
    with pytest.raises(BuildError, match="unknown parameters"):
        make("pendulum", mass=2.0)
    with pytest.raises(BuildError):
        make("custom_polynomial", dim=2)
    with pytest.raises(ValueError):
        SystemSpec(kind="linear", params={"matrix": [[float("nan")]]})
    with pytest.raises(BuildError, match="chart dimension"):
        build_system(SystemSpec(kind="pendulum", chart={"kind": "euclidean", "dim": 3}))


def test_lorenz_divergence():
    sys = make("lorenz")
    lo, hi = default_region("lorenz")
    P = lo + (hi - lo) * np.random.default_rng(3).random((50, 3))
    assert divergence(sys, P) == pytest.approx(np.full(50, -(10 + 1 + 8 / 3)))


def test_suspension_period_and_return():
    A = [[2, 1], [1, 1]]
    tau = suspension_period(A)
    assert tau == pytest.approx(math.log((3 + math.sqrt(5)) / 2))
    sys = make("suspended_toral_automorphism")
    x = np.array([0.2, 0.7, 0.3])
    y = flow_map(sys, x, tau)[0]
    assert float(sys.chart.distance(x, y)) > 1e-3
    # one full period maps the section point to its image under the automorphism
    z = np.append(np.array(A) @ x[:2] % 1.0, 0.3)
    assert float(sys.chart.distance(y, z)) < 1e-7


def test_gradient_field_on_torus():
    sys = make("gradient_morse_smale")
    assert sys.chart.kind == "torus"
    assert np.allclose(sys.f(np.array([[math.pi, math.pi], [0.0, 0.0]])), 0.0, atol=1e-12)
