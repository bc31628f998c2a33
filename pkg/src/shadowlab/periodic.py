"""Periodic orbits by Poincaré-section shooting."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .flow import SmoothSystem, StepControl, flow_map_variational, integrate

SHOOT_CONTROL = StepControl(tol=1e-11, max_step=0.25)


def _axis_period(chart, axis: int) -> Optional[float]:
    if chart.kind == "torus":
        return chart.periods[axis]
    if chart.kind == "mapping_torus" and axis == chart.dim - 1:
        return 1.0
    return None


def section_axis(sys: SmoothSystem, x) -> int:
    """Coordinate axis most transverse to the flow at ``x``."""
    f = np.abs(sys.f(x))
    chart = sys.chart
    if chart.kind == "mapping_torus":
        # only the suspension coordinate unwraps cleanly
        f[:-1] = -1.0
    return int(np.argmax(f))


def return_time(sys: SmoothSystem, x, axis: int, returns: int = 1, t_max: float = 50.0,
                ctrl: StepControl = StepControl(tol=1e-9)) -> Optional[float]:
    """Time of the ``returns``-th crossing of ``{x_axis = x[axis]}`` in the starting direction."""
    x = np.asarray(x, dtype=float)
    d = np.sign(sys.f(x)[axis])
    if d == 0:
        return None
    traj = integrate(sys, x, t_max, ctrl)
    s = traj.points[:, axis].copy()
    p = _axis_period(sys.chart, axis)
    if p is not None:
        s = np.unwrap(s, period=p)
        q = np.floor(d * (s - s[0]) / p)
    else:
        q = np.floor(np.sign(d * (s - s[0])))
    q[0] = 0.0
    up = np.nonzero(np.diff(q) > 0)[0]
    # skip a spurious event at the very start
    up = up[traj.times[up + 1] > 1e-6]
    if len(up) < returns:
        return None
    j = up[returns - 1]
    t0, t1 = traj.times[j], traj.times[j + 1]
    level = (q[j + 1]) * (p if p is not None else 0.0)
    a = d * (s[j] - s[0]) - level
    b = d * (s[j + 1] - s[0]) - level
    w = 0.0 if b == a else -a / (b - a)
    return float(t0 + min(max(w, 0.0), 1.0) * (t1 - t0))


@dataclass(frozen=True)
class ShootResult:
    points: np.ndarray       # (m, n)
    periods: np.ndarray      # (m,)
    residuals: np.ndarray    # (m,)
    monodromy: np.ndarray    # (m, n, n)
    converged: np.ndarray    # (m,) bool


def shoot_periodic(sys: SmoothSystem, Y0, T0, axes, max_iter: int = 30, tol: float = 1e-10,
                   ctrl: StepControl = SHOOT_CONTROL) -> ShootResult:
    """Newton on ``(y, T)`` for ``X_T(y) = y`` with ``y`` pinned to its section.

    Rows are solved together.  The bordered Jacobian is solved in the least
    squares sense, which handles families of periodic orbits.
    """
    chart = sys.chart
    Y = np.atleast_2d(np.array(Y0, dtype=float))
    m, n = Y.shape
    T = np.broadcast_to(np.asarray(T0, dtype=float), (m,)).copy()
    axes = np.broadcast_to(np.asarray(axes, dtype=int), (m,))
    level = Y[np.arange(m), axes].copy()
    res = np.full(m, np.inf)
    mono = np.zeros((m, n, n))
    active = np.ones(m, dtype=bool)
    for _ in range(max_iter + 1):
        rows = np.nonzero(active & (T > 0))[0]
        if len(rows) == 0:
            break
        E, M = flow_map_variational(sys, Y[rows], T[rows], ctrl)
        L, D = chart.nearest_image(Y[rows], E)
        fE = sys.f(E)
        if D is not None:
            M = D @ M
            fE = np.einsum("mij,mj->mi", D, fE)
        r = L - Y[rows]
        mono[rows] = M
        res[rows] = np.linalg.norm(r, axis=1)
        done = res[rows] < tol
        active[rows[done]] = False
        work = ~done
        if not np.any(work):
            break
        idx = rows[work]
        k = len(idx)
        J = np.zeros((k, n + 1, n + 1))
        J[:, :n, :n] = M[work] - np.eye(n)
        J[:, :n, n] = fE[work]
        J[np.arange(k), n, axes[idx]] = 1.0
        F = np.zeros((k, n + 1))
        F[:, :n] = r[work]
        F[:, n] = Y[idx, axes[idx]] - level[idx]
        step = np.einsum("kij,kj->ki", np.linalg.pinv(J, rcond=1e-10), F)
        # keep steps local; Newton from a poor seed can jump across the chart
        scale = np.maximum(1.0, np.linalg.norm(step[:, :n], axis=1) / 0.5)
        step /= scale[:, None]
        Y[idx] = chart.canonicalize(Y[idx] - step[:, :n])
        T[idx] = T[idx] - step[:, n]
    ok = res < 1e-8
    return ShootResult(chart.canonicalize(Y), T, res, mono, ok)


def flow_multiplier_index(multipliers) -> int:
    """Index of the multiplier closest to 1 (the flow direction)."""
    return int(np.argmin(np.abs(np.asarray(multipliers) - 1.0)))


def _adjugate(B: np.ndarray) -> np.ndarray:
    d = len(B)
    if d == 1:
        return np.array([[1]], dtype=object)
    adj = np.empty((d, d), dtype=object)
    for i in range(d):
        for j in range(d):
            minor = np.delete(np.delete(B, j, axis=0), i, axis=1)
            adj[i, j] = (-1) ** (i + j) * _det(minor)
    return adj


def _det(B) -> int:
    B = np.asarray(B, dtype=object)
    if len(B) == 1:
        return int(B[0, 0])
    return sum((-1) ** j * int(B[0, j]) * _det(np.delete(B[1:], j, axis=1)) for j in range(len(B)))


def toral_periodic_points(matrix, k: int) -> np.ndarray:
    """All fixed points of ``A^k`` on the torus, from exact integer arithmetic.

    Fixed points solve ``(A^k - I) u = m`` with ``m`` integer, so ``det * u``
    is an integer vector mod ``det``.  They are enumerated as images of the
    integer lattice under ``adj(A^k - I)``, reduced mod ``det``.
    """
    nums, q = _fixed_numerators(matrix, k)
    return nums / q


def _fixed_numerators(matrix, k: int):
    A = np.array(matrix, dtype=object)
    d = len(A)
    B = np.identity(d, dtype=object)
    for _ in range(k):
        B = B.dot(A)
    B = B - np.identity(d, dtype=object)
    det = _det(B)
    if det == 0:
        raise ValueError("A^k - I is singular")
    q = abs(det)
    adj = _adjugate(B)
    sign = 1 if det > 0 else -1
    # u = adj m / det; the group Z^d / B Z^d is generated by the unit vectors
    found = {tuple([0] * d)}
    frontier = [tuple([0] * d)]
    gens = [tuple(int(sign * adj[i, j]) % q for i in range(d)) for j in range(d)]
    while frontier:
        nxt = []
        for v in frontier:
            for g in gens:
                w = tuple((a + b) % q for a, b in zip(v, g))
                if w not in found:
                    found.add(w)
                    nxt.append(w)
        frontier = nxt
    if len(found) != q:
        raise RuntimeError(f"found {len(found)} periodic points, expected {q}")
    return np.array(sorted(found), dtype=np.int64), q


def toral_periodic_orbits(matrix, max_k: int) -> list[tuple[int, np.ndarray]]:
    """Primitive periodic orbits ``(k, representative)`` of the toral automorphism for ``k <= max_k``."""
    A = np.array(matrix, dtype=np.int64)
    out = []
    for k in range(1, max_k + 1):
        nums, q = _fixed_numerators(matrix, k)
        seen = set()
        for v in nums:
            key = tuple(int(a) for a in v)
            if key in seen:
                continue
            orbit = [key]
            w = v
            for _ in range(k - 1):
                w = (A @ w) % q
                orbit.append(tuple(int(a) for a in w))
            seen.update(orbit)
            if len(set(orbit)) == k:
                out.append((k, v.astype(float) / q))
    return out
