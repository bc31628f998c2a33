"""How well does a true orbit follow a pseudo-orbit?

A candidate orbit is represented by an :class:`OrbitTrack`: a few anchor
points on one orbit together with their orbit times.  Evaluating the track at
orbit time ``u`` integrates from the nearest anchor, which keeps long windows
on hyperbolic systems accurate.  Time changes are piecewise-linear
:class:`Reparametrization` objects found by a bottleneck dynamic program on a
(orbit time) x (pseudo-orbit time) lattice.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .flow import DEFAULT_CONTROL, IntegrationError, SmoothSystem, StepControl, flow_map, flow_map_variational
from .pseudo_orbit import (
    EscapeError,
    InsufficientDataError,
    PseudoOrbit,
    default_limit_schedule,
    gap_profile,
    trend_ok,
)

KINDS = ("sup", "average", "limit_tail", "asymptotic_average")
_ALIASES = {"limit": "limit_tail", "asymptotic": "asymptotic_average"}


class NoCandidateError(RuntimeError):
    pass


class RefinementError(RuntimeError):
    pass


def _kind(kind: str) -> str:
    kind = _ALIASES.get(kind, kind)
    if kind not in KINDS:
        raise ValueError(f"unknown statistic kind {kind!r}")
    return kind


# --------------------------------------------------------------------------
# reparametrizations
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Reparametrization:
    """Piecewise-linear increasing map ``t -> h(t)`` with ``h(0) = 0``.

    Outside the breakpoint range the end slopes are continued.
    """

    t: np.ndarray
    u: np.ndarray
    cost: Optional[float] = field(default=None, compare=False)

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        u = np.asarray(self.u, dtype=float)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "u", u)
        if t.shape != u.shape or t.ndim != 1 or len(t) == 0:
            raise ValueError("breakpoints must be two equal-length 1-D arrays")
        if len(t) > 1 and not (np.all(np.diff(t) > 0) and np.all(np.diff(u) > 0)):
            raise ValueError("reparametrization must be strictly increasing")
        k = np.nonzero(t == 0.0)[0]
        if len(k) != 1 or u[k[0]] != 0.0:
            raise ValueError("reparametrization must contain the breakpoint (0, 0)")

    @classmethod
    def identity(cls, t_min: float = -1.0, t_max: float = 1.0) -> "Reparametrization":
        pts = sorted({min(t_min, 0.0), 0.0, max(t_max, 0.0)})
        return cls(np.array(pts), np.array(pts))

    @property
    def breakpoints(self) -> np.ndarray:
        return np.column_stack([self.t, self.u])

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if len(self.t) == 1:
            return t.copy()
        out = np.interp(t, self.t, self.u)
        lo = t < self.t[0]
        hi = t > self.t[-1]
        if np.any(lo):
            s = (self.u[1] - self.u[0]) / (self.t[1] - self.t[0])
            out[lo] = self.u[0] + s * (t[lo] - self.t[0])
        if np.any(hi):
            s = (self.u[-1] - self.u[-2]) / (self.t[-1] - self.t[-2])
            out[hi] = self.u[-1] + s * (t[hi] - self.t[-1])
        return out

    def to_list(self) -> list:
        return [[float(a), float(b)] for a, b in zip(self.t, self.u)]


# --------------------------------------------------------------------------
# bottleneck lattice path
# --------------------------------------------------------------------------


@numba.njit(cache=True)
def _bottleneck(d):
    A1, B1 = d.shape
    last = B1 - 1
    G = np.full((A1, B1), np.inf)
    for a in range(A1):
        G[a, last] = d[a, last]
    for b in range(last - 1, -1, -1):
        for a in range(A1 - 1, -1, -1):
            best = G[a, b + 1]
            if a + 1 < A1:
                if G[a + 1, b + 1] < best:
                    best = G[a + 1, b + 1]
                if G[a + 1, b] < best:
                    best = G[a + 1, b]
            v = d[a, b]
            G[a, b] = v if v > best else best
    opt = G[0, 0]
    moves = np.zeros(A1 + B1, dtype=np.int8)
    na = np.zeros(A1 + B1 + 1, dtype=np.int64)
    nb = np.zeros(A1 + B1 + 1, dtype=np.int64)
    a = 0
    b = 0
    k = 0
    if opt < np.inf:
        while b < last:
            if a + 1 < A1 and G[a + 1, b + 1] <= opt:
                a += 1
                b += 1
                moves[k] = 0
            elif a + 1 < A1 and G[a + 1, b] <= opt:
                a += 1
                moves[k] = 1
            else:
                b += 1
                moves[k] = 2
            k += 1
            na[k] = a
            nb[k] = b
    return opt, moves[:k], na[:k + 1], nb[:k + 1]


_MOVE_CHARS = "DOP"


def bottleneck_path(cost) -> tuple[float, str, np.ndarray]:
    """Monotone lattice path from ``(0, 0)`` to the last column minimizing the maximum cost.

    Moves are ``D`` (both indices advance), ``O`` (row/orbit index advances)
    and ``P`` (column/pseudo-orbit index advances); the path stops on first
    reaching the last column.  Among optimal paths the lexicographically
    smallest move string (``D < O < P``) is returned, together with the
    visited nodes as an ``(k, 2)`` array.  ``inf`` entries are forbidden.
    """
    d = np.ascontiguousarray(cost, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] < 1 or d.shape[1] < 1:
        raise ValueError("cost must be a nonempty matrix")
    opt, moves, na, nb = _bottleneck(d)
    if not np.isfinite(opt):
        raise ValueError("no admissible path")
    return float(opt), "".join(_MOVE_CHARS[m] for m in moves), np.column_stack([na, nb])


# --------------------------------------------------------------------------
# orbit tracks
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class OrbitTrack:
    """Anchors ``y_j`` on one orbit at orbit times ``u_j`` (increasing, containing 0)."""

    sys: SmoothSystem
    anchors: np.ndarray
    times: np.ndarray
    ctrl: StepControl = DEFAULT_CONTROL

    @property
    def point(self) -> np.ndarray:
        return self.anchors[int(np.argmin(np.abs(self.times)))]

    @classmethod
    def from_points(cls, sys: SmoothSystem, X, u_min: float, u_max: float, step: float = 1.0,
                    ctrl: StepControl = DEFAULT_CONTROL) -> list:
        """Tracks for several initial points at once (anchors every ``step``)."""
        X = np.atleast_2d(sys.chart.canonicalize(sys.chart.check(X)))
        nf = int(math.ceil(max(u_max, 0.0) / step - 1e-9))
        nb = int(math.ceil(max(-u_min, 0.0) / step - 1e-9))
        k, n = X.shape
        anchors = np.empty((k, nb + nf + 1, n))
        anchors[:, nb] = X
        for j in range(nf):
            anchors[:, nb + j + 1] = flow_map(sys, anchors[:, nb + j], step, ctrl)
        for j in range(nb):
            anchors[:, nb - j - 1] = flow_map(sys, anchors[:, nb - j], -step, ctrl)
        times = step * np.arange(-nb, nf + 1, dtype=float)
        return [cls(sys, anchors[r], times, ctrl) for r in range(k)]

    @classmethod
    def from_point(cls, sys: SmoothSystem, x, u_min: float, u_max: float, step: float = 1.0,
                   ctrl: StepControl = DEFAULT_CONTROL) -> "OrbitTrack":
        return cls.from_points(sys, np.asarray(x, dtype=float)[None], u_min, u_max, step, ctrl)[0]

    def evaluate(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        j = np.searchsorted(self.times, u, side="right") - 1
        j = np.clip(j, 0, len(self.times) - 1)
        # prefer the anchor below except past the last one
        return flow_map(self.sys, self.anchors[j], u - self.times[j], self.ctrl)

    def defect(self) -> float:
        """Largest mismatch between consecutive anchors (0 for an exact orbit)."""
        if len(self.times) < 2:
            return 0.0
        ends = flow_map(self.sys, self.anchors[:-1], np.diff(self.times), self.ctrl)
        return float(np.max(self.sys.chart.distance(ends, self.anchors[1:])))


def _as_track(sys, po: PseudoOrbit, orbit, ctrl) -> OrbitTrack:
    if isinstance(orbit, OrbitTrack):
        return orbit
    s = po.cumulative_times()
    return OrbitTrack.from_point(sys, orbit, s[0], s[-1], 1.0, ctrl)


def _check_inside(points, neighborhood, what="orbit"):
    if neighborhood is None:
        return
    lo, hi = (np.asarray(b, dtype=float) for b in neighborhood)
    bad = np.nonzero(np.any((points < lo) | (points > hi), axis=1))[0]
    if len(bad):
        raise EscapeError(int(bad[0]), points[bad[0]])


# --------------------------------------------------------------------------
# alignment
# --------------------------------------------------------------------------


def _po_nodes(po: PseudoOrbit, grid: int, forward: bool):
    """Pseudo-orbit lattice nodes on one side of 0: ``(|t|, entry, tau)``."""
    s = po.cumulative_times()
    z = -po.i_min
    t_list, e_list, tau_list = [], [], []
    if forward:
        for k in range(z, len(po)):
            for j in range(grid):
                tau = po.durations[k] * j / grid
                t_list.append(s[k] + tau)
                e_list.append(k)
                tau_list.append(tau)
        k = len(po) - 1
        t_list.append(s[-1])
        e_list.append(k)
        tau_list.append(po.durations[k])
    else:
        t_list.append(0.0)
        e_list.append(z)
        tau_list.append(0.0)
        for k in range(z - 1, -1, -1):
            for j in range(grid - 1, -1, -1):
                tau = po.durations[k] * j / grid
                t_list.append(-(s[k] + tau))
                e_list.append(k)
                tau_list.append(tau)
    return np.array(t_list), np.array(e_list, dtype=int), np.array(tau_list)


def _align_side(sys, po, track, grid, slack, band, forward, neighborhood):
    tb, ent, tau = _po_nodes(po, grid, forward)
    B = len(tb) - 1
    T = tb[-1]
    du = T / B
    A = int(math.ceil(slack * B))
    ua = du * np.arange(A + 1)
    P = flow_map(sys, po.points[ent], tau, track.ctrl)
    sign = 1.0 if forward else -1.0
    O = track.evaluate(sign * ua)
    _check_inside(O, neighborhood)
    if band is None:
        band = np.inf
    ai, bi = np.nonzero(np.abs(ua[:, None] - tb[None, :]) <= band + 1e-12)
    d = np.full((A + 1, B + 1), np.inf)
    d[ai, bi] = sys.chart.distance(O[ai], P[bi])
    opt, moves, nodes = bottleneck_path(d)
    # breakpoints: start, every diagonal target, end
    keep = [0] + [k + 1 for k, m in enumerate(moves) if m == "D"]
    if keep[-1] != len(nodes) - 1:
        keep.append(len(nodes) - 1)
    bt = tb[nodes[keep, 1]]
    bu = ua[nodes[keep, 0]]
    if len(bt) > 1 and bu[-1] <= bu[-2]:
        # trailing run of pseudo-orbit-only moves: keep h strictly increasing
        bu = bu.copy()
        bu[-1] = bu[-2] + 1e-6 * du
    return sign * bt, sign * bu, opt


def align(sys: SmoothSystem, po: PseudoOrbit, orbit, grid: int = 8, slack: float = 1.25,
          band: Optional[float] = None, neighborhood=None, ctrl: StepControl = DEFAULT_CONTROL) -> Reparametrization:
    """Bottleneck-optimal piecewise-linear time change between an orbit and ``po``.

    ``orbit`` is an initial point or an :class:`OrbitTrack`.  The forward part
    (``t >= 0``) and the backward part (``t <= 0``) are aligned independently;
    both start at ``(0, 0)``.  The returned map carries the optimal lattice
    cost in ``cost``.  ``band`` restricts the lattice to ``|h(t) - t| <= band``.
    """
    if grid < 4:
        raise ValueError("alignment needs at least 4 nodes per segment")
    track = _as_track(sys, po, orbit, ctrl)
    t_f, u_f, c_f = _align_side(sys, po, track, grid, slack, band, True, neighborhood)
    t_all, u_all, cost = t_f, u_f, c_f
    if po.i_min < 0:
        t_b, u_b, c_b = _align_side(sys, po, track, grid, slack, band, False, neighborhood)
        t_all = np.concatenate([t_b[:0:-1], t_f])
        u_all = np.concatenate([u_b[:0:-1], u_f])
        cost = max(c_f, c_b)
    h = Reparametrization(t_all, u_all, cost)
    return h


# --------------------------------------------------------------------------
# statistics
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SegmentCosts:
    indices: np.ndarray
    sups: np.ndarray
    integrals: np.ndarray
    resolution: int


def segment_costs(sys: SmoothSystem, po: PseudoOrbit, orbit, h: Optional[Reparametrization] = None,
                  resolution: int = 8, ctrl: StepControl = DEFAULT_CONTROL) -> SegmentCosts:
    """Per-segment supremum and Simpson integral of ``d(X_{h(t)}(x), X_{t - s_i}(x_i))``.

    Each segment is sampled at ``2 * resolution + 1`` equally spaced times
    (nodes plus midpoints).
    """
    track = _as_track(sys, po, orbit, ctrl)
    s = po.cumulative_times()
    if h is None:
        h = Reparametrization.identity(s[0], s[-1])
    m = len(po)
    q = 2 * resolution
    frac = np.arange(q + 1) / q
    tau = po.durations[:, None] * frac[None, :]
    t = s[:-1, None] + tau
    ent = np.repeat(np.arange(m), q + 1)
    P = flow_map(sys, po.points[ent], tau.ravel(), track.ctrl)
    O = track.evaluate(h(t.ravel()))
    D = sys.chart.distance(O, P).reshape(m, q + 1)
    w = np.ones(q + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    integrals = (D @ w) * po.durations / (3.0 * q)
    return SegmentCosts(po.indices, D.max(axis=1), integrals, resolution)


def _split(costs: SegmentCosts):
    idx = costs.indices
    fwd = idx >= 0
    return idx[fwd], costs.integrals[fwd], idx[~fwd][::-1], costs.integrals[~fwd][::-1]


def _last_quarter_max(avgs: np.ndarray) -> float:
    q = max(1, int(math.ceil(len(avgs) / 4)))
    return float(np.max(avgs[-q:]))


@dataclass(frozen=True)
class ShadowReport:
    """Outcome of one statistic on one (pseudo-orbit, orbit, h) triple.

    ``value`` is recomputable from the per-segment arrays with
    :func:`aggregate`; ``tail`` holds the raw sequence behind limit and
    asymptotic verdicts, and ``passed`` the verdict itself where the kind has
    one.
    """

    kind: str
    value: float
    indices: np.ndarray
    per_segment: np.ndarray
    segment_sup: np.ndarray
    reparam: Reparametrization
    tail: Optional[dict] = None
    passed: Optional[bool] = None
    resolution: int = 8

    def to_dict(self) -> dict:
        tail = None
        if self.tail is not None:
            tail = {k: [float(v) for v in np.asarray(vals).ravel()] if not isinstance(vals, (int, float)) else vals
                    for k, vals in self.tail.items()}
        return {
            "kind": self.kind,
            "value": float(self.value),
            "passed": self.passed,
            "tail": tail,
            "segments": [{"i": int(i), "integral": float(c), "sup": float(m)}
                         for i, c, m in zip(self.indices, self.per_segment, self.segment_sup)],
            "reparam_breakpoints": self.reparam.to_list(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["i", "integral", "sup"])
            for i, c, m in zip(self.indices, self.per_segment, self.segment_sup):
                w.writerow([int(i), repr(float(c)), repr(float(m))])

    def tail_csv(self, path) -> None:
        """One row per tail entry: ``side,i,value``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["side", "i", "value"])
            for side in ("forward", "backward"):
                if self.tail and f"{side}_index" in self.tail:
                    for i, v in zip(self.tail[f"{side}_index"], self.tail[f"{side}_values"]):
                        w.writerow([side, int(i), repr(float(v))])


def aggregate(kind: str, costs: SegmentCosts, tol: Optional[float] = None, schedule=None):
    """Combine per-segment costs into ``(value, tail, passed)`` for one kind."""
    kind = _kind(kind)
    if kind == "sup":
        return float(np.max(costs.sups)), None, None
    fi, fv, bi, bv = _split(costs)
    if kind == "average":
        # (1/n) sum_{i=1}^{n} I_i forward and I_{-i} backward
        vals = []
        tail = {}
        for side, v in (("forward", fv[1:]), ("backward", bv)):
            if len(v) >= 4:
                avg = np.cumsum(v) / np.arange(1, len(v) + 1)
                tail[f"{side}_averages"] = avg
                vals.append(_last_quarter_max(avg))
        if not vals:
            raise InsufficientDataError("average statistic needs at least 4 segments on one side")
        return max(vals), tail, None
    if kind == "limit_tail":
        tail = {}
        worst, floor, ok = 0.0, 0.0, True
        for side, idx, v in (("forward", fi, fv), ("backward", bi, bv)):
            if len(v) == 0:
                continue
            a = np.abs(idx)
            outer = a >= 0.75 * a.max()
            sched = schedule or default_limit_schedule(v, idx)
            bound = sched(a[outer])
            tail[f"{side}_index"] = idx[outer]
            tail[f"{side}_values"] = v[outer]
            worst = max(worst, float(v[outer].max()))
            floor = max(floor, float(v[outer].min()))
            ok = ok and bool(np.all(v[outer] <= bound * (1 + 1e-9) + 1e-300))
        tail["floor"] = floor
        return worst, tail, ok
    # asymptotic average: (1/n) sum_{i=0}^{n} I_i on both sides
    if costs.indices[0] != -costs.indices[-1]:
        raise InsufficientDataError("asymptotic statistic needs a symmetric window")
    tail = {}
    vals = []
    ok = True
    for side, v in (("forward", fv), ("backward", bv)):
        if len(v) < 2:
            raise InsufficientDataError("window too short")
        n = np.arange(1, len(v))
        avg = np.cumsum(v)[1:] / n
        tail[f"{side}_averages"] = avg
        vals.append(_last_quarter_max(avg))
        if tol is not None:
            ok = ok and trend_ok(avg, tol)
    return max(vals), tail, (ok if tol is not None else None)


def shadow_report(kind: str, sys: SmoothSystem, po: PseudoOrbit, orbit, h: Optional[Reparametrization] = None,
                  resolution: int = 8, tol: Optional[float] = None, schedule=None,
                  ctrl: StepControl = DEFAULT_CONTROL) -> ShadowReport:
    kind = _kind(kind)
    costs = segment_costs(sys, po, orbit, h, resolution, ctrl)
    if h is None:
        s = po.cumulative_times()
        h = Reparametrization.identity(s[0], s[-1])
    value, tail, passed = aggregate(kind, costs, tol, schedule)
    return ShadowReport(kind, value, costs.indices, costs.integrals, costs.sups, h, tail, passed, resolution)


def sup_statistic(sys, po, orbit, h=None, resolution: int = 8, ctrl=DEFAULT_CONTROL) -> float:
    """Sampled ``sup_t d(X_{h(t)}(x), X_{t - s_i}(x_i))`` over the window."""
    return shadow_report("sup", sys, po, orbit, h, resolution, ctrl=ctrl).value


def average_statistic(sys, po, orbit, h=None, resolution: int = 8, ctrl=DEFAULT_CONTROL) -> float:
    """Largest Cesaro average of segment integrals over the last quarter of window sizes."""
    return shadow_report("average", sys, po, orbit, h, resolution, ctrl=ctrl).value


def limit_statistic(sys, po, orbit, h=None, resolution: int = 8, schedule=None, ctrl=DEFAULT_CONTROL) -> ShadowReport:
    """Segment integrals over the outer quarter, judged against a decreasing schedule."""
    return shadow_report("limit_tail", sys, po, orbit, h, resolution, schedule=schedule, ctrl=ctrl)


def asymptotic_statistic(sys, po, orbit, h=None, resolution: int = 8, tol: Optional[float] = None,
                         ctrl=DEFAULT_CONTROL) -> ShadowReport:
    """Symmetric Cesaro averages ``(1/n) sum_{i=0}^{n}`` of segment integrals on each side."""
    if not po.is_symmetric():
        raise InsufficientDataError("asymptotic statistic needs a symmetric window")
    return shadow_report("asymptotic_average", sys, po, orbit, h, resolution, tol=tol, ctrl=ctrl)


# --------------------------------------------------------------------------
# multiple-shooting refinement
# --------------------------------------------------------------------------


def refine_shadow(sys: SmoothSystem, po: PseudoOrbit, ctrl: StepControl = DEFAULT_CONTROL,
                  max_iter: int = 20, tol: float = 1e-10, free_time: bool = True) -> OrbitTrack:
    """Nearby true orbit by least-squares Newton on the matching conditions.

    Unknowns are points ``y_i`` (one per entry) and, with ``free_time``, the
    flight times ``tau_i``; the conditions are ``X_{tau_i}(y_i) = y_{i+1}``.
    Each step takes the minimum-norm correction of the linearized
    conditions, so on hyperbolic windows the iterates stay close to the
    pseudo-orbit.  Free flight times let noise along the flow become a time
    shift instead of drift.  The returned track is anchored at orbit times
    ``u_i`` (cumulative flight times, ``u = 0`` at entry 0), so
    :func:`natural_reparametrization` recovers the time change.  Raises
    :class:`RefinementError` without convergence.
    """
    chart = sys.chart
    y = po.points.copy()
    m, n = y.shape
    if m < 2:
        return OrbitTrack(sys, y, np.zeros(1), ctrl)
    tau = po.durations[:-1].copy()

    def residual(y, tau):
        ends, M = flow_map_variational(sys, y[:-1], tau, ctrl)
        lift, D = chart.nearest_image(y[1:], ends)
        g = sys.f(ends)
        if D is not None:
            M = D @ M
            g = np.einsum("kij,kj->ki", D, g)
        return lift - y[1:], M, g

    try:
        r, M, g = residual(y, tau)
    except IntegrationError as err:
        raise RefinementError(str(err)) from err
    rn = float(np.abs(r).max())
    rows = np.arange((m - 1) * n)
    width = m * n + (m - 1 if free_time else 0)
    for _ in range(max_iter):
        if rn < tol:
            break
        # J [dy; dtau] = -r with blocks [M_i, -I, g_i]
        bi = np.repeat(np.arange(m - 1), n * n)
        ri = (bi * n + np.tile(np.repeat(np.arange(n), n), m - 1))
        ci = (bi * n + np.tile(np.tile(np.arange(n), n), m - 1))
        vals = [M.ravel(), -np.ones((m - 1) * n)]
        rr = [ri, rows]
        cc = [ci, rows + n]
        if free_time:
            vals.append(g.ravel())
            rr.append(rows)
            cc.append(m * n + np.repeat(np.arange(m - 1), n))
        J = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rr), np.concatenate(cc))),
                          shape=((m - 1) * n, width))
        lam = spsolve((J @ J.T).tocsc(), -r.ravel())
        delta = J.T @ lam
        dy = delta[:m * n].reshape(m, n)
        dtau = delta[m * n:] if free_time else np.zeros(m - 1)
        step = 1.0
        improved = False
        while step > 1e-3:
            tau_try = tau + step * dtau
            if np.any(tau_try <= 0):
                step /= 2
                continue
            y_try = chart.canonicalize(y + step * dy)
            try:
                r_try, M_try, g_try = residual(y_try, tau_try)
            except IntegrationError:
                step /= 2
                continue
            rn_try = float(np.abs(r_try).max())
            if rn_try < rn:
                y, tau, r, M, g, rn = y_try, tau_try, r_try, M_try, g_try, rn_try
                improved = True
                break
            step /= 2
        if not improved:
            break
    if rn >= max(tol, 1e-8):
        raise RefinementError(f"matching residual stalled at {rn:.3g}")
    u = np.concatenate([[0.0], np.cumsum(tau)])
    u -= u[-po.i_min]
    return OrbitTrack(sys, y, u, ctrl)


def natural_reparametrization(po: PseudoOrbit, track: OrbitTrack) -> Reparametrization:
    """Time change sending each pseudo-orbit time ``s_i`` to the anchor time ``u_i``.

    Needs one anchor per entry, as produced by :func:`refine_shadow`; the
    last segment keeps unit slope.
    """
    s = po.cumulative_times()
    if len(track.times) != len(po):
        raise ValueError("track does not have one anchor per entry")
    u = np.append(track.times, track.times[-1] + po.durations[-1])
    return Reparametrization(s, u)


# --------------------------------------------------------------------------
# search
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ShadowSearch:
    point: np.ndarray
    report: ShadowReport
    track: OrbitTrack
    candidates: list  # (label, point, report) for every evaluated candidate


def _evaluate(kind, sys, po, track, grid, resolution, band, neighborhood, tol, schedule, ctrl):
    h = align(sys, po, track, grid=grid, band=band, neighborhood=neighborhood, ctrl=ctrl)
    return shadow_report(kind, sys, po, track, h, resolution, tol=tol, schedule=schedule, ctrl=ctrl)


def search_shadowing_orbit(sys: SmoothSystem, po: PseudoOrbit, candidate_seeds: int = 8, refine: int = 2,
                           kind: str = "sup", seed: int = 0, grid: int = 8, resolution: int = 8,
                           band: Optional[float] = None, neighborhood=None, newton: bool = True,
                           tol: Optional[float] = None, schedule=None,
                           ctrl: StepControl = DEFAULT_CONTROL) -> ShadowSearch:
    """Best shadowing orbit found for ``po`` under the statistic ``kind``.

    Candidates are ``x_0``, ``candidate_seeds`` points drawn uniformly from the
    ball of radius 5 x (largest gap) around it, and (with ``newton``) the
    multiple-shooting refinement of the whole window.  Each is aligned, the
    best point candidate is polished by coordinate descent for ``refine``
    sweeps, and the overall minimum is returned.
    """
    kind = _kind(kind)
    rng = np.random.default_rng(seed)
    n = sys.dimension
    s = po.cumulative_times()
    span = s[-1] - s[0]
    if band is None and span > 16:
        band = max(2.0, 0.05 * span)
    gaps = gap_profile(sys, po, ctrl).gaps
    radius = 5.0 * float(gaps.max()) if len(gaps) else 0.0
    radius = radius if radius > 0 else 1e-6
    x0 = po.entry(0)[0]
    pts = [x0]
    for _ in range(candidate_seeds):
        v = rng.standard_normal(n)
        v *= radius * rng.random() ** (1.0 / n) / np.linalg.norm(v)
        pts.append(sys.chart.canonicalize(x0 + v))
    pts = np.array(pts)
    u_lo, u_hi = 1.25 * s[0] - 1.0, 1.25 * s[-1] + 1.0
    evaluated = []

    def run(label, track, h=None):
        try:
            if h is None:
                rep = _evaluate(kind, sys, po, track, grid, resolution, band, neighborhood, tol, schedule, ctrl)
            else:
                rep = shadow_report(kind, sys, po, track, h, resolution, tol=tol, schedule=schedule, ctrl=ctrl)
        except (EscapeError, IntegrationError):
            return None
        evaluated.append((label, track.point, rep))
        return rep

    try:
        tracks = OrbitTrack.from_points(sys, pts, u_lo, u_hi, 1.0, ctrl)
    except IntegrationError:
        tracks = []
        for p in pts:
            try:
                tracks.append(OrbitTrack.from_point(sys, p, u_lo, u_hi, 1.0, ctrl))
            except IntegrationError:
                tracks.append(None)
    best = None
    for k, tr in enumerate(tracks):
        if tr is None:
            continue
        rep = run(f"ball-{k}" if k else "x0", tr)
        if rep is not None and (best is None or rep.value < best[1].value):
            best = (tr, rep, True)
    if newton and len(po) > 1:
        try:
            tr = refine_shadow(sys, po, ctrl)
        except RefinementError:
            tr = None
        if tr is not None:
            for label, h in (("newton", None), ("newton-natural", natural_reparametrization(po, tr))):
                rep = run(label, tr, h)
                if rep is not None and (best is None or rep.value < best[1].value):
                    best = (tr, rep, False)
    # coordinate descent on the initial point, when a point candidate is best
    if best is not None and refine > 0 and best[2]:
        step = max(radius / 4, 1e-9)
        for _ in range(refine):
            improved = False
            for axis in range(n):
                for sgn in (1.0, -1.0):
                    p = best[0].point.copy()
                    p[axis] += sgn * step
                    try:
                        tr = OrbitTrack.from_point(sys, sys.chart.canonicalize(p), u_lo, u_hi, 1.0, ctrl)
                    except IntegrationError:
                        continue
                    rep = run("descent", tr)
                    if rep is not None and rep.value < best[1].value:
                        best = (tr, rep, True)
                        improved = True
            if not improved:
                step /= 2
    if best is None:
        raise NoCandidateError("every candidate orbit escaped or failed to integrate")
    return ShadowSearch(best[0].point, best[1], best[0], evaluated)


# --------------------------------------------------------------------------
# closed-form oracle for linear saddles
# --------------------------------------------------------------------------


def linear_shadow_oracle(A, po: PseudoOrbit):
    """Bounded true orbit of ``x' = A x`` next to ``po`` and the shadowing constant.

    Writes ``y_i = x_i + z_i`` and solves ``z_{i+1} = M_i z_i - eta_i`` with
    ``eta_i = x_{i+1} - M_i x_i``: stable eigen-coordinates run forward from
    0, unstable ones backward from 0.  Returns ``(y, kappa)`` where
    ``kappa = sum_{k>=0} |E_s e^{kA}| + sum_{k>=1} |E_u e^{-kA}|`` bounds
    ``sup |z_i| / sup |eta_i|`` for unit durations.
    """
    A = np.asarray(A, dtype=float)
    w, P = np.linalg.eig(A)
    if np.any(np.abs(w.imag) > 1e-12):
        raise ValueError("oracle needs real eigenvalues")
    w, P = w.real, P.real
    Pinv = np.linalg.inv(P)
    x = po.points
    m = len(x)
    st = w < 0
    z = np.zeros((m, len(w)))
    mult = np.exp(np.outer(po.durations, w))
    ex = x @ Pinv.T
    eta = ex[1:] - mult[:-1] * ex[:-1]
    for k in range(m - 1):
        z[k + 1, st] = mult[k, st] * z[k, st] - eta[k, st]
    for k in range(m - 2, -1, -1):
        z[k, ~st] = (z[k + 1, ~st] + eta[k, ~st]) / mult[k, ~st]
    y = (ex + z) @ P.T
    Es = P[:, st] @ Pinv[st]
    Eu = P[:, ~st] @ Pinv[~st]
    kappa = 0.0
    for k in range(0, 2000):
        term = np.linalg.norm(Es @ P @ np.diag(np.exp(k * w)) @ Pinv, 2)
        if k >= 1:
            term += np.linalg.norm(Eu @ P @ np.diag(np.exp(-k * w)) @ Pinv, 2)
        kappa += term
        if term < 1e-17:
            break
    return y, float(kappa)


# --------------------------------------------------------------------------
# limit shadowing across an attractor boundary
# --------------------------------------------------------------------------


def attraction_radius(sys: SmoothSystem, sink, radius: float, samples: int = 64, horizon: float = 20.0,
                      ctrl: StepControl = DEFAULT_CONTROL, tries: int = 10) -> float:
    """Largest tested radius (halving from ``radius``) whose sampled sphere flows into ``sink``.

    A radius is accepted when every sample ends within ``1e-3 * radius`` of
    the sink after ``horizon`` and never leaves the ball of twice the radius.
    Returns 0 when nothing passes.
    """
    sink = np.asarray(sink, dtype=float)
    n = sys.dimension
    rng = np.random.default_rng(0)
    dirs = rng.standard_normal((samples, n))
    if n == 2:
        ang = np.linspace(0.0, 2 * math.pi, samples, endpoint=False)
        dirs = np.column_stack([np.cos(ang), np.sin(ang)])
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    r = float(radius)
    for _ in range(tries):
        cur = sys.chart.canonicalize(sink + r * dirs)
        ok = True
        for _ in range(int(horizon)):
            cur = flow_map(sys, cur, 1.0, ctrl)
            if np.any(sys.chart.distance(cur, sink) > 2 * r):
                ok = False
                break
        if ok and np.all(sys.chart.distance(cur, sink) < 1e-3 * r):
            return r
        r /= 2
    return 0.0


@dataclass(frozen=True)
class LimitFalsification:
    """Outcome of trying to limit-shadow an attractor-crossing pseudo-orbit.

    ``floors`` maps each evaluated candidate to the larger of its two tail
    minima; the construction is falsified when every floor reaches
    ``eps0 / 2``.
    """

    eps0: float
    floors: dict
    falsified: bool
    pseudo_orbit: PseudoOrbit
    search: ShadowSearch

    def to_dict(self) -> dict:
        return {"eps0": self.eps0, "threshold": self.eps0 / 2, "falsified": self.falsified,
                "floors": {k: v for k, v in sorted(self.floors.items())}}


def limit_shadowing_falsifier(sys: SmoothSystem, sink, other, back_len: int = 40, fwd_len: int = 40,
                              eps0: Optional[float] = None, candidate_seeds: int = 8, seed: int = 0,
                              ctrl: StepControl = DEFAULT_CONTROL) -> LimitFalsification:
    """Join the sink's orbit (past) to the orbit of ``other`` (future) and search for a limit shadow.

    ``other`` must lie outside the sink's basin.  ``eps0`` defaults to half
    the distance from the sink to ``other``, confirmed (and shrunk if needed)
    by :func:`attraction_radius`.
    """
    from .pseudo_orbit import attractor_crossing

    sink = np.asarray(sink, dtype=float)
    other = np.asarray(other, dtype=float)
    if eps0 is None:
        eps0 = attraction_radius(sys, sink, 0.5 * float(sys.chart.distance(sink, other)), ctrl=ctrl)
    if eps0 <= 0:
        raise ValueError("could not verify an attraction radius for the sink")
    po = attractor_crossing(sys, sink, other, back_len, fwd_len, ctrl)
    res = search_shadowing_orbit(sys, po, candidate_seeds=candidate_seeds, kind="limit_tail",
                                 seed=seed, ctrl=ctrl)
    floors = {}
    for k, (label, _, rep) in enumerate(res.candidates):
        floors[f"{k:02d}-{label}"] = float(rep.tail["floor"])
    falsified = bool(floors) and all(v >= eps0 / 2 for v in floors.values())
    return LimitFalsification(float(eps0), floors, falsified, po, res)
