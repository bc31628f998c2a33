"""Catalog of small vector fields used by the verification suites."""

from __future__ import annotations

import math
from typing import Any, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from .flow import Chart, SmoothSystem, divergence, jacobian_mismatch

KINDS = ("linear", "pendulum", "gradient_morse_smale", "lorenz",
         "suspended_toral_automorphism", "custom_polynomial")

CAT_MAP = [[2, 1], [1, 1]]


class BuildError(ValueError):
    """A system spec that does not produce a consistent vector field."""

    def __init__(self, message: str, point=None):
        if point is not None:
            message = f"{message} at {np.round(np.asarray(point, dtype=float), 6).tolist()}"
        super().__init__(message)
        self.point = point


Param = Union[float, list[float], list[list[float]]]


class SystemSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str = ""
    kind: Literal["linear", "pendulum", "gradient_morse_smale", "lorenz",
                  "suspended_toral_automorphism", "custom_polynomial"]
    params: dict[str, Param] = {}
    chart: Optional[dict[str, Any]] = None

    @field_validator("params")
    @classmethod
    def _finite(cls, v):
        for key, val in v.items():
            if not np.all(np.isfinite(np.asarray(val, dtype=float))):
                raise ValueError(f"parameter {key!r} is not finite")
        return v


DEFAULTS = {
    "linear": {"matrix": [[-1.0, 0.0], [0.0, 1.0]]},
    "pendulum": {"gravity": 1.0},
    "gradient_morse_smale": {"strength": 2.0},
    "lorenz": {"sigma": 10.0, "rho": 28.0, "beta": 8.0 / 3.0},
    "suspended_toral_automorphism": {"matrix": CAT_MAP},
    "custom_polynomial": {},
}

DESCRIPTIONS = {
    "linear": "x' = M x on R^n",
    "pendulum": "x' = y, y' = -g sin x on the cylinder S^1 x R",
    "gradient_morse_smale": "x' = c sin x, y' = c sin y on T^2 (1 sink, 1 source, 2 saddles)",
    "lorenz": "Lorenz equations on R^3",
    "suspended_toral_automorphism": "unit-speed suspension of a hyperbolic toral automorphism, period log(lambda_max)",
    "custom_polynomial": "polynomial field given by monomial terms [component, coeff, powers...]",
}


def catalog() -> list[dict]:
    return [{"kind": k, "description": DESCRIPTIONS[k], "defaults": DEFAULTS[k]} for k in KINDS]


def _params(spec: SystemSpec) -> dict:
    p = dict(DEFAULTS[spec.kind])
    p.update(spec.params)
    unknown = set(spec.params) - set(DEFAULTS[spec.kind]) - _EXTRA.get(spec.kind, set())
    if unknown:
        raise BuildError(f"unknown parameters for {spec.kind}: {sorted(unknown)}")
    return p


_EXTRA = {"custom_polynomial": {"dim", "terms", "jacobian_terms"}}


def _chart_from(spec: SystemSpec, default: Chart) -> Chart:
    if spec.chart is None:
        return default
    c = spec.chart
    kind = c.get("kind", "euclidean")
    if kind == "euclidean":
        chart = Chart.euclidean(int(c.get("dim", default.dim)))
    elif kind == "torus":
        chart = Chart.torus(c["periods"])
    elif kind == "mapping_torus":
        chart = Chart.mapping_torus(c["monodromy"])
    else:
        raise BuildError(f"unknown chart kind {kind!r}")
    if chart.dim != default.dim:
        raise BuildError(f"chart dimension {chart.dim} does not match system dimension {default.dim}")
    return chart


def _linear(p):
    M = np.asarray(p["matrix"], dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise BuildError("linear system needs a square matrix")
    n = len(M)
    field = lambda x: x @ M.T
    jac = lambda x: np.broadcast_to(M, (len(x), n, n)).copy()
    return Chart.euclidean(n), field, jac


def _pendulum(p):
    g = float(p["gravity"])

    def field(x):
        return np.stack([x[:, 1], -g * np.sin(x[:, 0])], axis=1)

    def jac(x):
        J = np.zeros((len(x), 2, 2))
        J[:, 0, 1] = 1.0
        J[:, 1, 0] = -g * np.cos(x[:, 0])
        return J

    return Chart.torus([2 * math.pi, None]), field, jac


def _gradient(p):
    c = float(p["strength"])

    def field(x):
        return c * np.sin(x)

    def jac(x):
        J = np.zeros((len(x), 2, 2))
        J[:, 0, 0] = c * np.cos(x[:, 0])
        J[:, 1, 1] = c * np.cos(x[:, 1])
        return J

    return Chart.torus([2 * math.pi, 2 * math.pi]), field, jac


def _lorenz(p):
    s, r, b = float(p["sigma"]), float(p["rho"]), float(p["beta"])

    def field(x):
        X, Y, Z = x[:, 0], x[:, 1], x[:, 2]
        return np.stack([s * (Y - X), X * (r - Z) - Y, X * Y - b * Z], axis=1)

    def jac(x):
        X, Y, Z = x[:, 0], x[:, 1], x[:, 2]
        J = np.zeros((len(x), 3, 3))
        J[:, 0, 0] = -s
        J[:, 0, 1] = s
        J[:, 1, 0] = r - Z
        J[:, 1, 1] = -1.0
        J[:, 1, 2] = -X
        J[:, 2, 0] = Y
        J[:, 2, 1] = X
        J[:, 2, 2] = -b
        return J

    return Chart.euclidean(3), field, jac


def suspension_period(matrix) -> float:
    """``log`` of the expanding eigenvalue: the return time to the base fiber."""
    ev = np.abs(np.linalg.eigvals(np.asarray(matrix, dtype=float)))
    return float(math.log(ev.max()))


def _suspension(p):
    A = np.asarray(p["matrix"], dtype=float)
    ev = np.abs(np.linalg.eigvals(A))
    if np.any(np.abs(ev - 1.0) < 1e-9):
        raise BuildError("toral automorphism is not hyperbolic")
    tau = suspension_period(A)
    n = len(A) + 1

    def field(x):
        out = np.zeros_like(x)
        out[:, -1] = 1.0 / tau
        return out

    def jac(x):
        return np.zeros((len(x), n, n))

    return Chart.mapping_torus(A), field, jac


def _monomials(x, powers):
    # powers (k, n) -> (m, k)
    return np.prod(x[:, None, :] ** powers[None, :, :], axis=2)


def _custom(p):
    if "dim" not in p or "terms" not in p:
        raise BuildError("custom_polynomial needs 'dim' and 'terms'")
    n = int(p["dim"])
    T = np.asarray(p["terms"], dtype=float)
    if T.ndim != 2 or T.shape[1] != n + 2:
        raise BuildError(f"each term is [component, coeff, {n} powers]")
    comp = T[:, 0].astype(int)
    coef = T[:, 1]
    pw = T[:, 2:]
    if np.any(comp < 0) or np.any(comp >= n) or np.any(pw < 0) or np.any(pw != np.round(pw)):
        raise BuildError("term components and powers must be valid non-negative integers")
    # analytic derivative terms: d/dx_k of c x^p = c p_k x^(p - e_k)
    drows = []
    for k in range(n):
        dp = pw.copy()
        dp[:, k] = np.maximum(dp[:, k] - 1, 0)
        drows.append((k, coef * pw[:, k], dp))

    def field(x):
        mono = _monomials(x, pw) * coef
        out = np.zeros((len(x), n))
        for j in range(n):
            out[:, j] = mono[:, comp == j].sum(axis=1)
        return out

    if "jacobian_terms" in p:
        JT = np.asarray(p["jacobian_terms"], dtype=float)
        if JT.ndim != 2 or JT.shape[1] != n + 3:
            raise BuildError(f"each jacobian term is [row, col, coeff, {n} powers]")

        def jac(x):
            mono = _monomials(x, JT[:, 3:]) * JT[:, 2]
            J = np.zeros((len(x), n, n))
            for t in range(len(JT)):
                J[:, int(JT[t, 0]), int(JT[t, 1])] += mono[:, t]
            return J
    else:
        def jac(x):
            J = np.zeros((len(x), n, n))
            for k, c, dp in drows:
                mono = _monomials(x, dp) * c
                for j in range(n):
                    J[:, j, k] = mono[:, comp == j].sum(axis=1)
            return J

    return Chart.euclidean(n), field, jac


_BUILDERS = {
    "linear": _linear,
    "pendulum": _pendulum,
    "gradient_morse_smale": _gradient,
    "lorenz": _lorenz,
    "suspended_toral_automorphism": _suspension,
    "custom_polynomial": _custom,
}

CONSERVATIVE = ("pendulum", "suspended_toral_automorphism")


def default_region(kind: str, dim: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Bounding box used by graph and critical-orbit searches."""
    if kind == "pendulum":
        return np.array([0.0, -3.0]), np.array([2 * math.pi, 3.0])
    if kind == "gradient_morse_smale":
        return np.zeros(2), np.full(2, 2 * math.pi)
    if kind == "lorenz":
        return np.array([-25.0, -30.0, 0.0]), np.array([25.0, 30.0, 55.0])
    if kind == "suspended_toral_automorphism":
        return np.zeros(dim), np.ones(dim)
    if kind == "linear":
        return -np.ones(dim), np.ones(dim)
    return -2 * np.ones(dim), 2 * np.ones(dim)


def check_points(sys: SmoothSystem, lo, hi, count: int = 64, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return lo + (hi - lo) * rng.random((count, sys.dimension))


def build_system(spec: SystemSpec) -> SmoothSystem:
    """Instantiate a catalog system and re-check its Jacobian (and divergence when conservative)."""
    if isinstance(spec, dict):
        spec = SystemSpec(**spec)
    p = _params(spec)
    try:
        default_chart, field, jac = _BUILDERS[spec.kind](p)
    except (KeyError, TypeError, ValueError) as err:
        if isinstance(err, BuildError):
            raise
        raise BuildError(f"invalid parameters for {spec.kind}: {err}") from err
    chart = _chart_from(spec, default_chart)
    sys = SmoothSystem(spec.name or spec.kind, chart, field, jac, p)
    lo, hi = default_region(spec.kind, chart.dim)
    pts = check_points(sys, lo, hi)
    if not np.all(np.isfinite(sys.f(pts))):
        raise BuildError("field is not finite", pts[0])
    err, worst = jacobian_mismatch(sys, pts)
    if err > 1e-5:
        raise BuildError(f"Jacobian inconsistent with field (relative error {err:.3g})", worst)
    if spec.kind in CONSERVATIVE:
        div = np.abs(divergence(sys, pts))
        if div.max() > 1e-10:
            raise BuildError("conservative system has nonzero divergence", pts[int(np.argmax(div))])
    return sys


def make(kind: str, **params) -> SmoothSystem:
    """Shorthand: ``make("pendulum")``, ``make("linear", matrix=[[-2, 0], [0, 1]])``."""
    return build_system(SystemSpec(kind=kind, params=params))


def pendulum_energy(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return 0.5 * x[..., 1] ** 2 - np.cos(x[..., 0])
