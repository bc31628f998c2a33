"""Smooth vector fields on flat charts, trajectory and variational integration.

Points are plain numpy arrays in chart coordinates.  A :class:`Chart` knows how
to put coordinates in canonical form, how to measure distance and how to lift
one point next to another, which is all the geometry the rest of the package
needs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "Chart",
    "SmoothSystem",
    "StepControl",
    "Trajectory",
    "CocycleSegment",
    "IntegrationError",
    "ChartMismatchError",
    "distance",
    "integrate",
    "integrate_variational",
    "flow_map",
    "flow_map_variational",
    "divergence",
    "jacobian_mismatch",
    "trajectory_to_csv",
    "trajectory_from_csv",
]


class IntegrationError(RuntimeError):
    """Step size underflow or non-finite state during integration."""

    def __init__(self, message: str, last_time: float):
        super().__init__(f"{message} (last good time {last_time:.6g})")
        self.last_time = last_time


class ChartMismatchError(ValueError):
    pass


# --------------------------------------------------------------------------
# charts
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Chart:
    """Flat chart for phase space.

    ``kind`` is one of

    * ``"euclidean"``: plain R^n.
    * ``"torus"``: R^n modulo ``periods``; an axis with period ``None`` is not
      wrapped, so cylinders are tori with some open axes.
    * ``"mapping_torus"``: coordinates ``(u_1, ..., u_{n-1}, z)`` where ``u``
      lives on the flat torus R^{n-1}/Z^{n-1} and the slab ``0 <= z < 1`` is
      glued by ``(u, 1) ~ (A u, 0)`` for the integer matrix ``monodromy = A``.
      This is the suspension manifold of the toral automorphism ``A``.
    """

    kind: str
    dim: int
    periods: Optional[tuple] = None
    monodromy: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in ("euclidean", "torus", "mapping_torus"):
            raise ValueError(f"unknown chart kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("chart dimension must be positive")
        if self.kind == "torus":
            if self.periods is None or len(self.periods) != self.dim:
                raise ValueError("torus chart needs one period per axis")
        if self.kind == "mapping_torus":
            A = np.asarray(self.monodromy, dtype=float)
            if A.shape != (self.dim - 1, self.dim - 1):
                raise ValueError("monodromy must be (dim-1)x(dim-1)")
            if abs(abs(np.linalg.det(A)) - 1.0) > 1e-12 or np.any(A != np.round(A)):
                raise ValueError("monodromy must be an integer unimodular matrix")

    # constructors -------------------------------------------------------
    @classmethod
    def euclidean(cls, dim: int) -> "Chart":
        return cls("euclidean", dim)

    @classmethod
    def torus(cls, periods: Sequence[Optional[float]]) -> "Chart":
        return cls("torus", len(periods), tuple(None if p is None else float(p) for p in periods))

    @classmethod
    def mapping_torus(cls, matrix) -> "Chart":
        A = np.asarray(matrix, dtype=float)
        return cls("mapping_torus", A.shape[0] + 1, monodromy=tuple(map(tuple, A.tolist())))

    # helpers ------------------------------------------------------------
    @property
    def _period_array(self) -> np.ndarray:
        return np.array([np.nan if p is None else p for p in self.periods])

    @property
    def _A(self) -> np.ndarray:
        return np.asarray(self.monodromy, dtype=float)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "dim": self.dim}
        if self.periods is not None:
            out["periods"] = list(self.periods)
        if self.monodromy is not None:
            out["monodromy"] = [list(r) for r in self.monodromy]
        return out

    def check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ChartMismatchError(f"point of dimension {x.shape[-1]} on a {self.dim}-dimensional chart")
        return x

    # canonical form ------------------------------------------------------
    def canonicalize(self, x) -> np.ndarray:
        return self.canonicalize_with_derivative(x)[0]

    def canonicalize_with_derivative(self, x):
        """Canonical representative and the derivative of the identifying map.

        Returns ``(x_canonical, D)`` where ``D`` has shape ``(..., n, n)`` or is
        ``None`` when the identification is a translation everywhere.
        """
        x = np.array(x, dtype=float, copy=True)
        if self.kind == "euclidean":
            return x, None
        if self.kind == "torus":
            p = self._period_array
            wrap = ~np.isnan(p)
            x[..., wrap] = np.mod(x[..., wrap], p[wrap])
            # np.mod can return the period itself for tiny negatives
            hit = x[..., wrap] >= p[wrap]
            if np.any(hit):
                sub = x[..., wrap]
                sub[hit] = 0.0
                x[..., wrap] = sub
            return x, None
        # mapping torus
        A = self._A
        k = np.floor(x[..., -1]).astype(int)
        D = None
        if np.any(k != 0):
            flat = x.reshape(-1, self.dim)
            kf = k.reshape(-1)
            D = np.broadcast_to(np.eye(self.dim), flat.shape[:1] + (self.dim, self.dim)).copy()
            for kk in np.unique(kf):
                if kk == 0:
                    continue
                rows = kf == kk
                Ak = np.linalg.matrix_power(A.astype(np.int64), int(kk)) if kk > 0 else \
                    np.round(np.linalg.matrix_power(np.linalg.inv(A), int(-kk))).astype(np.int64)
                Ak = Ak.astype(float)
                flat[rows, :-1] = flat[rows, :-1] @ Ak.T
                flat[rows, -1] -= kk
                D[rows, :-1, :-1] = Ak
            x = flat.reshape(x.shape)
            D = D.reshape(x.shape + (self.dim,))
        x[..., :-1] = np.mod(x[..., :-1], 1.0)
        x[..., :-1][x[..., :-1] >= 1.0] = 0.0
        x[..., -1] = np.clip(x[..., -1], 0.0, np.nextafter(1.0, 0.0))
        return x, D

    # lifting and distance -----------------------------------------------
    def nearest_image(self, a, b):
        """Representative of ``b`` closest to ``a`` and the derivative of that map.

        Returns ``(b_lift, D)`` with ``D`` of shape ``(..., n, n)`` or ``None``
        for translations.
        """
        a = self.check(a)
        b = self.check(b)
        if self.kind == "euclidean":
            return np.broadcast_to(b, np.broadcast(a, b).shape).copy(), None
        if self.kind == "torus":
            p = self._period_array
            wrap = ~np.isnan(p)
            d = a - b
            lift = np.broadcast_to(b, d.shape).copy()
            shift = np.round(d[..., wrap] / p[wrap]) * p[wrap]
            lift[..., wrap] = lift[..., wrap] + shift
            return lift, None
        A = self._A
        a2, b2 = np.broadcast_arrays(a, b)
        shape = a2.shape
        af = a2.reshape(-1, self.dim)
        bf = b2.reshape(-1, self.dim)
        best = np.full(af.shape[0], np.inf)
        lift = np.empty_like(af)
        D = np.broadcast_to(np.eye(self.dim), af.shape[:1] + (self.dim, self.dim)).copy()
        mats = {0: np.eye(self.dim - 1), 1: np.linalg.inv(A), -1: A}
        # when the heights are close the same-level copy always wins
        zcut = (1.0 - (self.dim - 1) / 4.0) / 2.0
        far = np.abs(af[:, -1] - bf[:, -1]) > zcut
        for j, M in mats.items():
            # (u, z) ~ (A u, z - 1)  so the copy at height z + j is (A^{-j} u, z + j)
            rows = slice(None) if j == 0 else np.nonzero(far)[0]
            ar, br = af[rows], bf[rows]
            cand = np.empty_like(br)
            cand[:, :-1] = br[:, :-1] @ M.T
            cand[:, -1] = br[:, -1] + j
            base = cand[:, :-1].copy()
            cand[:, :-1] = base + np.round(ar[:, :-1] - base)
            dist = np.linalg.norm(ar - cand, axis=1)
            better = dist < best[rows]
            idx = np.arange(len(af))[rows][better]
            best[idx] = dist[better]
            lift[idx] = cand[better]
            if j != 0:
                D[idx, :-1, :-1] = M
        return lift.reshape(shape), D.reshape(shape + (self.dim,))

    def displacement(self, a, b) -> np.ndarray:
        """Vector from the nearest copy of ``b`` to ``a``."""
        lift, _ = self.nearest_image(a, b)
        return np.asarray(a, dtype=float) - lift

    def distance(self, a, b) -> np.ndarray:
        d = np.linalg.norm(self.displacement(a, b), axis=-1)
        if self.kind == "mapping_torus":
            # gluing is not an isometry of the flat slab; symmetrize
            d = np.minimum(d, np.linalg.norm(self.displacement(b, a), axis=-1))
        return d


def distance(a, b, chart: Optional[Chart] = None):
    """Chart distance between points (vectorized over leading axes)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if chart is None:
        chart = Chart.euclidean(a.shape[-1])
    if a.shape[-1] != b.shape[-1]:
        raise ChartMismatchError("points have different dimensions")
    return chart.distance(a, b)


# --------------------------------------------------------------------------
# systems
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SmoothSystem:
    """A C^1 vector field on a chart.

    ``field`` maps an array of shape ``(m, n)`` to ``(m, n)`` and ``jacobian``
    maps ``(m, n)`` to ``(m, n, n)``.  Single points are accepted by
    :meth:`f` and :meth:`jac`.
    """

    name: str
    chart: Chart
    field: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    params: dict = field(default_factory=dict, compare=False)

    @property
    def dimension(self) -> int:
        return self.chart.dim

    def f(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return self.field(x[None])[0]
        return self.field(x)

    def jac(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return self.jacobian(x[None])[0]
        return self.jacobian(x)

    def negated(self) -> "SmoothSystem":
        f, J = self.field, self.jacobian
        return replace(self, name=f"-{self.name}", field=lambda x: -f(x), jacobian=lambda x: -J(x))


def divergence(sys: SmoothSystem, x) -> np.ndarray:
    """Trace of the Jacobian at ``x`` (vectorized)."""
    return np.trace(sys.jac(x), axis1=-2, axis2=-1)


def jacobian_mismatch(sys: SmoothSystem, points, h: float = 1e-6) -> tuple[float, np.ndarray]:
    """Worst relative gap between ``sys.jacobian`` and central differences.

    Returns ``(error, point)`` for the worst point.
    """
    X = np.atleast_2d(np.asarray(points, dtype=float))
    m, n = X.shape
    J = sys.jac(X)
    fd = np.empty_like(J)
    for k in range(n):
        e = np.zeros(n)
        e[k] = h
        fd[:, :, k] = (sys.f(X + e) - sys.f(X - e)) / (2 * h)
    scale = np.maximum(1.0, np.abs(J).max(axis=(1, 2)))
    err = np.abs(J - fd).max(axis=(1, 2)) / scale
    i = int(np.argmax(err))
    return float(err[i]), X[i]


# --------------------------------------------------------------------------
# integration engine
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class StepControl:
    scheme: str = "dopri5"
    base_step: float = 0.05
    tol: float = 1e-9
    max_steps: int = 2_000_000
    # cap for endpoint-only maps; sampled trajectories always use base_step
    max_step: float = 1.0

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tolerance must be positive")
        if self.base_step <= 0 or self.max_step <= 0:
            raise ValueError("step sizes must be positive")
        if self.scheme != "dopri5":
            raise ValueError(f"unsupported scheme {self.scheme!r}")

    def to_dict(self) -> dict:
        return {"scheme": self.scheme, "base_step": self.base_step, "tol": self.tol,
                "max_step": self.max_step}


DEFAULT_CONTROL = StepControl()

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])


def _hermite(y0, f0, y1, f1, h, theta):
    t = theta[:, None]
    t2 = t * t
    t3 = t2 * t
    return ((2 * t3 - 3 * t2 + 1) * y0 + (t3 - 2 * t2 + t) * h[:, None] * f0
            + (-2 * t3 + 3 * t2) * y1 + (t3 - t2) * h[:, None] * f1)


def _march(rhs, y0, spans, tol, max_step, out_times=None, post=None, max_steps=2_000_000):
    """Advance every row of ``y0`` by its own forward time ``spans[i]``.

    Each row carries its own adaptive step so results do not depend on how
    rows are batched.  ``out_times`` (shared by all rows, each <= the row's
    span) are filled by cubic Hermite interpolation.  ``post`` re-canonicalizes
    accepted states.
    """
    y = np.array(y0, dtype=float, copy=True)
    m, d = y.shape
    spans = np.broadcast_to(np.asarray(spans, dtype=float), (m,)).copy()
    t = np.zeros(m)
    k1 = rhs(y) if m else np.zeros_like(y)
    out = None
    if out_times is not None:
        out_times = np.asarray(out_times, dtype=float)
        out = np.empty((m, len(out_times), d))
        nxt = np.zeros(m, dtype=int)
        at0 = out_times <= 0.0
        if np.any(at0):
            out[:, at0] = y[:, None, :]
            nxt[:] = int(at0.sum())
    # initial step (Hairer & Wanner heuristic, vectorized)
    sc = tol + tol * np.abs(y)
    d0 = np.sqrt(np.mean((y / sc) ** 2, axis=1)) if d else np.zeros(m)
    d1 = np.sqrt(np.mean((k1 / sc) ** 2, axis=1)) if d else np.zeros(m)
    h = np.where((d0 < 1e-5) | (d1 < 1e-5), 1e-6, 0.01 * d0 / np.maximum(d1, 1e-300))
    h = np.minimum(h, max_step)
    active = spans > 0
    steps = 0
    while np.any(active):
        steps += 1
        if steps > max_steps:
            raise IntegrationError("maximum number of steps exceeded", float(t[active].min()))
        idx = np.nonzero(active)[0]
        yi, ti = y[idx], t[idx]
        hi = np.minimum(np.minimum(h[idx], spans[idx] - ti), max_step)
        K = [k1[idx]]
        for s in range(1, 7):
            acc = yi.copy()
            for j, a in enumerate(_A[s]):
                if a != 0.0:
                    acc += (hi * a)[:, None] * K[j]
            K.append(rhs(acc))
            if s == 6:
                ynew = acc
        err_vec = np.zeros_like(yi)
        for j in range(7):
            if _E[j] != 0.0:
                err_vec += _E[j] * K[j]
        err_vec *= hi[:, None]
        scale = tol + tol * np.maximum(np.abs(yi), np.abs(ynew))
        err = np.max(np.abs(err_vec) / scale, axis=1) if d else np.zeros(len(idx))
        bad = ~np.isfinite(err)
        if np.any(bad):
            raise IntegrationError("non-finite state", float(ti[bad].min()))
        ok = err <= 1.0
        if np.any(ok):
            acc_rows = idx[ok]
            tnew = ti[ok] + hi[ok]
            y_new_ok = ynew[ok]
            f_new_ok = K[6][ok]
            if out is not None:
                sub = np.nonzero(ok)[0]
                while True:
                    nn = nxt[acc_rows]
                    has = nn < len(out_times)
                    T = np.where(has, out_times[np.minimum(nn, len(out_times) - 1)], np.inf)
                    cross = has & (T <= tnew + 1e-12 * np.maximum(1.0, np.abs(tnew)))
                    if not np.any(cross):
                        break
                    rows = sub[cross]
                    theta = np.clip((T[cross] - ti[rows]) / hi[rows], 0.0, 1.0)
                    vals = _hermite(yi[rows], K[0][rows], ynew[rows], K[6][rows], hi[rows], theta)
                    if post is not None:
                        vals = post(vals)
                    out[acc_rows[cross], nn[cross]] = vals
                    nxt[acc_rows[cross]] += 1
            finished = spans[acc_rows] - tnew <= 1e-13 * np.maximum(1.0, spans[acc_rows])
            tnew = np.where(finished, spans[acc_rows], tnew)
            if post is not None:
                y_post = post(y_new_ok)
                changed = np.any(y_post != y_new_ok, axis=1)
                if np.any(changed):
                    f_new_ok = f_new_ok.copy()
                    f_new_ok[changed] = rhs(y_post[changed])
                y_new_ok = y_post
            y[acc_rows] = y_new_ok
            k1[acc_rows] = f_new_ok
            t[acc_rows] = tnew
            active[acc_rows[finished]] = False
        fac = np.where(err > 0, 0.9 * np.power(np.maximum(err, 1e-300), -0.2), 5.0)
        fac = np.clip(fac, 0.2, 5.0)
        fac = np.where(ok, fac, np.minimum(fac, 1.0))
        h[idx] = hi * fac
        tiny = (~ok) & (h[idx] < 1e-14 * np.maximum(1.0, np.abs(ti)))
        if np.any(tiny):
            raise IntegrationError("step size underflow", float(ti[tiny].min()))
    return y, out


def _chart_post(chart: Chart, n: int, p: int = 0):
    """Canonicalization callback for states (and optional n x p frames)."""
    if chart.kind == "euclidean":
        return None

    def post(Y):
        x, D = chart.canonicalize_with_derivative(Y[:, :n])
        out = Y.copy()
        out[:, :n] = x
        if p and D is not None:
            Phi = Y[:, n:].reshape(-1, n, p)
            out[:, n:] = np.einsum("mij,mjk->mik", D, Phi).reshape(len(Y), n * p)
        return out

    return post


def _signed(sys: SmoothSystem, span: float):
    return (sys if span >= 0 else sys.negated()), abs(span)


def flow_map(sys: SmoothSystem, X, spans, ctrl: StepControl = DEFAULT_CONTROL) -> np.ndarray:
    """Endpoints ``X_{spans[i]}(X[i])`` for a batch of points.

    ``spans`` may mix signs; each row is integrated independently.
    """
    X = np.atleast_2d(sys.chart.check(X))
    spans = np.broadcast_to(np.asarray(spans, dtype=float), (len(X),))
    out = np.empty_like(X)
    post = _chart_post(sys.chart, sys.dimension)
    for sign in (1.0, -1.0):
        rows = spans >= 0 if sign > 0 else spans < 0
        if not np.any(rows):
            continue
        s = sys if sign > 0 else sys.negated()
        y, _ = _march(s.field, X[rows], np.abs(spans[rows]), ctrl.tol, ctrl.max_step, post=post,
                      max_steps=ctrl.max_steps)
        out[rows] = y
    return sys.chart.canonicalize(out)


def _augmented(sys: SmoothSystem, p: int):
    n = sys.dimension

    def rhs(Y):
        x = Y[:, :n]
        Phi = Y[:, n:].reshape(-1, n, p)
        dPhi = sys.jacobian(x) @ Phi
        return np.concatenate([sys.field(x), dPhi.reshape(len(Y), n * p)], axis=1)

    return rhs


def flow_map_variational(sys: SmoothSystem, X, spans, ctrl: StepControl = DEFAULT_CONTROL):
    """Endpoints and derivative matrices ``DX_t`` for a batch (no renormalization)."""
    X = np.atleast_2d(sys.chart.check(X))
    m, n = X.shape
    spans = np.broadcast_to(np.asarray(spans, dtype=float), (m,))
    Y0 = np.concatenate([X, np.broadcast_to(np.eye(n).ravel(), (m, n * n))], axis=1)
    ends = np.empty_like(X)
    mats = np.empty((m, n, n))
    post = _chart_post(sys.chart, n, n)
    for sign in (1.0, -1.0):
        rows = spans >= 0 if sign > 0 else spans < 0
        if not np.any(rows):
            continue
        s = sys if sign > 0 else sys.negated()
        y, _ = _march(_augmented(s, n), Y0[rows], np.abs(spans[rows]), ctrl.tol, ctrl.max_step,
                      post=post, max_steps=ctrl.max_steps)
        ends[rows] = y[:, :n]
        mats[rows] = y[:, n:].reshape(-1, n, n)
    return sys.chart.canonicalize(ends), mats


# --------------------------------------------------------------------------
# trajectories
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Trajectory:
    """Samples of one orbit, in increasing time order.

    For a backward integration the samples run from ``span`` up to 0, so the
    initial point is the last sample.
    """

    times: np.ndarray
    points: np.ndarray
    step_control: StepControl
    chart: Chart
    span: float

    def __post_init__(self):
        if len(self.times) != len(self.points):
            raise ValueError("times and points differ in length")
        if len(self.times) > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("trajectory times must be strictly increasing")

    @property
    def initial(self) -> np.ndarray:
        return self.points[0] if self.span >= 0 else self.points[-1]

    @property
    def final(self) -> np.ndarray:
        return self.points[-1] if self.span >= 0 else self.points[0]

    def __len__(self):
        return len(self.times)


def _sample_times(span: float, step: float) -> np.ndarray:
    T = abs(span)
    k = int(math.floor(T / step + 1e-9))
    grid = step * np.arange(k + 1)
    if T - grid[-1] > 1e-9 * max(1.0, T):
        grid = np.append(grid, T)
    else:
        grid[-1] = T
    return grid


def integrate(sys: SmoothSystem, x0, span: float, ctrl: StepControl = DEFAULT_CONTROL) -> Trajectory:
    """Trajectory of ``x0`` over ``[0, span]`` (or ``[span, 0]`` for negative span).

    Explicit adaptive Dormand-Prince 5(4) with steps capped at
    ``ctrl.base_step``; samples on the ``base_step`` grid come from cubic
    Hermite interpolation between accepted steps.
    """
    x0 = sys.chart.canonicalize(sys.chart.check(x0))
    s, T = _signed(sys, span)
    grid = _sample_times(T, ctrl.base_step)
    if T == 0:
        return Trajectory(np.zeros(1), x0[None].copy(), ctrl, sys.chart, 0.0)
    _, out = _march(s.field, x0[None], T, ctrl.tol, ctrl.base_step, out_times=grid,
                    post=_chart_post(sys.chart, sys.dimension), max_steps=ctrl.max_steps)
    pts = out[0]
    times = grid.copy()
    if span < 0:
        times = -times[::-1]
        pts = pts[::-1]
    return Trajectory(times, pts, ctrl, sys.chart, float(span))


@dataclass(frozen=True)
class CocycleSegment:
    """Derivative cocycle along a trajectory.

    The true derivative at sample ``k`` is ``exp(log_scales[k]) * matrices[k]``.
    Renormalization happens every ``renorm`` time units: the running frame is
    QR-factored, integration continues with ``Q`` and the triangular factors
    are accumulated (with a scalar log-scale) and, separately, through the
    log-moduli of their diagonals.
    """

    base: Trajectory
    matrices: np.ndarray
    log_scales: np.ndarray
    local: np.ndarray
    chunk_index: np.ndarray
    chunk_logdiag: np.ndarray
    renorm: float
    chunk_frames: np.ndarray = None
    chunk_ends: np.ndarray = None

    def derivative(self, k: int) -> np.ndarray:
        return math.exp(self.log_scales[k]) * self.matrices[k]

    def log_growth(self) -> np.ndarray:
        """Cumulative ``log|R_jj|`` of the QR factorization of each sample's frame.

        For a generic initial frame, column ``j`` grows like the ``j``-th
        largest singular value of the cocycle.
        """
        R = np.linalg.qr(self.local, mode="r")
        diag = np.abs(np.diagonal(R, axis1=-2, axis2=-1))
        return np.log(np.maximum(diag, 1e-300)) + self.chunk_logdiag[self.chunk_index]

    def push_frames(self, frames) -> np.ndarray:
        """Log-growth of the QR columns of ``DX_t W`` for a batch of frames ``W``.

        ``frames`` has shape ``(P, n, p)``; the cocycle must have been built
        from a square orthonormal frame.  Returns shape ``(P, samples, p)`` in
        the sample order of :attr:`base`.  Each frame is re-orthonormalized at
        every renormalization time, so no precision is lost over long spans.
        """
        W = np.asarray(frames, dtype=float)
        if W.ndim == 2:
            W = W[None]
        n = self.local.shape[1]
        if self.local.shape[2] != n:
            raise ValueError("push_frames needs a cocycle built from a square frame")
        order = np.argsort(np.abs(self.base.times), kind="stable")
        P, _, p = W.shape
        out = np.empty((P, len(order), p))
        cur = W.copy()
        acc = np.zeros((P, p))
        chunk = 0
        for k in order:
            j = self.chunk_index[k]
            while chunk < j:
                M = self.chunk_ends[chunk] @ self.chunk_frames[chunk].T
                Q, R = np.linalg.qr(np.einsum("ij,pjk->pik", M, cur))
                acc += np.log(np.maximum(np.abs(np.diagonal(R, axis1=1, axis2=2)), 1e-300))
                cur = Q
                chunk += 1
            M = self.local[k] @ self.chunk_frames[j].T
            R = np.linalg.qr(np.einsum("ij,pjk->pik", M, cur), mode="r")
            out[:, k] = acc + np.log(np.maximum(np.abs(np.diagonal(R, axis1=1, axis2=2)), 1e-300))
        return out


def integrate_variational(sys: SmoothSystem, x0, span: float, ctrl: StepControl = DEFAULT_CONTROL,
                          frame=None, renorm: float = 1.0) -> CocycleSegment:
    """Integrate the state together with ``DX_t`` (or ``DX_t`` applied to ``frame``)."""
    n = sys.dimension
    x0 = sys.chart.canonicalize(sys.chart.check(x0))
    V = np.eye(n) if frame is None else np.asarray(frame, dtype=float).reshape(n, -1)
    p = V.shape[1]
    s, T = _signed(sys, span)
    grid = _sample_times(T, ctrl.base_step)
    post = _chart_post(sys.chart, n, p)
    rhs = _augmented(s, p)

    n_samples = len(grid)
    pts = np.empty((n_samples, n))
    local = np.empty((n_samples, n, p))
    chunk_index = np.zeros(n_samples, dtype=int)
    Rcum = np.eye(p)
    rscale = 0.0
    Rs = [Rcum.copy()]
    scales = [0.0]
    logdiag = [np.zeros(p)]
    frames = [V.copy()]
    ends = []

    state = np.concatenate([x0, V.ravel()])
    t0 = 0.0
    chunk = 0
    done = 0
    pts[0], local[0] = x0, V
    done = 1
    while done < n_samples:
        t1 = min(t0 + renorm, T)
        sel = (grid > t0 + 1e-12) & (grid <= t1 + 1e-12)
        sub = grid[sel] - t0
        y, out = _march(rhs, state[None], t1 - t0, ctrl.tol, ctrl.base_step, out_times=sub,
                        post=post, max_steps=ctrl.max_steps)
        k = len(sub)
        pts[done:done + k] = out[0, :, :n]
        local[done:done + k] = out[0, :, n:].reshape(k, n, p)
        chunk_index[done:done + k] = chunk
        done += k
        Phi = y[0, n:].reshape(n, p)
        ends.append(Phi.copy())
        Q, R = np.linalg.qr(Phi)
        sgn = np.sign(np.diag(R))
        sgn[sgn == 0] = 1.0
        Q = Q * sgn
        R = sgn[:, None] * R
        Rcum = R @ Rcum
        mag = np.abs(Rcum).max()
        Rcum /= mag
        rscale += math.log(mag)
        logdiag.append(logdiag[-1] + np.log(np.maximum(np.abs(np.diag(R)), 1e-300)))
        chunk += 1
        Rs.append(Rcum.copy())
        scales.append(rscale)
        frames.append(Q.copy())
        state = np.concatenate([y[0, :n], Q.ravel()])
        t0 = t1
    Rs = np.array(Rs)
    matrices = local @ Rs[chunk_index]
    log_scales = np.array(scales)[chunk_index]
    times = grid.copy()
    base_pts = pts
    if span < 0:
        times = -times[::-1]
        order = slice(None, None, -1)
    else:
        order = slice(None)
    base = Trajectory(times, base_pts[order], ctrl, sys.chart, float(span))
    return CocycleSegment(base, matrices[order], log_scales[order], local[order],
                          chunk_index[order], np.array(logdiag), renorm,
                          np.array(frames), np.array(ends).reshape(-1, n, p))


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------


def trajectory_to_csv(traj: Trajectory, path) -> None:
    n = traj.points.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"x{k}" for k in range(n)])
        for t, p in zip(traj.times, traj.points):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in p])


def trajectory_from_csv(path, chart: Optional[Chart] = None, ctrl: StepControl = DEFAULT_CONTROL) -> Trajectory:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header[0] != "t":
        raise ValueError("trajectory CSV must start with a 't' column")
    data = np.array([[float(v) for v in r] for r in body])
    n = data.shape[1] - 1
    chart = chart or Chart.euclidean(n)
    span = float(data[-1, 0]) if data[0, 0] == 0 else float(data[0, 0])
    return Trajectory(data[:, 0], data[:, 1:], ctrl, chart, span)
