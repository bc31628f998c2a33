"""Finite windows of pseudo-orbits, their gap profiles and class predicates.

A pseudo-orbit is a sequence ``(x_i, t_i)`` indexed by a contiguous window
``i_min..i_max`` containing 0.  The gap at index ``i`` is
``d(X_{t_i}(x_i), x_{i+1})``.  The four classes (plain, average, limit,
asymptotic average) differ only in how the gaps are aggregated.

Every "limit" notion is judged on the outer part of the finite window against
an explicit, reported schedule; nothing here certifies a true limit.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import expm

from .flow import (
    DEFAULT_CONTROL,
    Chart,
    IntegrationError,
    SmoothSystem,
    StepControl,
    flow_map,
)

CLASS_TAGS = ("plain", "average", "limit", "asymptotic")


class InsufficientDataError(ValueError):
    pass


class EscapeError(RuntimeError):
    def __init__(self, index: int, point=None):
        super().__init__(f"pseudo-orbit left the declared neighborhood at index {index}")
        self.index = index
        self.point = point


class JunctionError(ValueError):
    pass


class SegmentIntegrationError(RuntimeError):
    def __init__(self, index: int, cause: Exception):
        super().__init__(f"integration failed on segment {index}: {cause}")
        self.index = index


@dataclass(frozen=True)
class PseudoOrbit:
    points: np.ndarray
    durations: np.ndarray
    i_min: int = 0
    class_tag: str = "plain"
    chart: Optional[Chart] = None

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        dur = np.broadcast_to(np.asarray(self.durations, dtype=float), (len(pts),)).copy()
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "durations", dur)
        if self.chart is None:
            object.__setattr__(self, "chart", Chart.euclidean(pts.shape[1]))
        if len(pts) == 0:
            raise ValueError("pseudo-orbit needs at least one entry")
        if self.class_tag not in CLASS_TAGS:
            raise ValueError(f"unknown class tag {self.class_tag!r}")
        if not (self.i_min <= 0 <= self.i_max):
            raise ValueError("index window must contain 0")
        if np.any(dur <= 0):
            raise ValueError("durations must be positive")
        if self.class_tag != "plain" and np.any(dur < 1.0):
            raise ValueError(f"{self.class_tag} pseudo-orbits need durations >= 1")

    def __len__(self):
        return len(self.points)

    @property
    def i_max(self) -> int:
        return self.i_min + len(self.points) - 1

    @property
    def indices(self) -> np.ndarray:
        return np.arange(self.i_min, self.i_max + 1)

    def entry(self, i: int):
        k = i - self.i_min
        return self.points[k], float(self.durations[k])

    def cumulative_times(self) -> np.ndarray:
        """``s_i`` for ``i = i_min .. i_max + 1`` (one more than the entries)."""
        s = np.zeros(len(self) + 1)
        z = -self.i_min
        t = self.durations
        s[z + 1:] = np.cumsum(t[z:])
        if z > 0:
            s[:z] = -np.cumsum(t[:z][::-1])[::-1]
        return s

    def s(self, i: int) -> float:
        return float(self.cumulative_times()[i - self.i_min])

    def shifted(self, k: int) -> "PseudoOrbit":
        """Same sequence relabeled so that old index ``k`` becomes index 0."""
        return PseudoOrbit(self.points, self.durations, self.i_min - k, self.class_tag, self.chart)

    def with_tag(self, tag: str) -> "PseudoOrbit":
        return PseudoOrbit(self.points, self.durations, self.i_min, tag, self.chart)

    def is_symmetric(self) -> bool:
        return self.i_min == -self.i_max

    def to_csv(self, path) -> None:
        n = self.points.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["i", "t_i"] + [f"x{k}" for k in range(n)])
            for i, t, p in zip(self.indices, self.durations, self.points):
                w.writerow([int(i), repr(float(t))] + [repr(float(v)) for v in p])

    @classmethod
    def from_csv(cls, path, class_tag: str = "plain", chart: Optional[Chart] = None) -> "PseudoOrbit":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if rows[0][:2] != ["i", "t_i"]:
            raise ValueError("pseudo-orbit CSV must start with columns i,t_i")
        data = [[float(v) for v in r] for r in rows[1:]]
        idx = [int(r[0]) for r in data]
        if idx != list(range(idx[0], idx[0] + len(idx))):
            raise ValueError("indices must be contiguous")
        arr = np.array(data)
        return cls(arr[:, 2:], arr[:, 1], idx[0], class_tag, chart)


@dataclass(frozen=True)
class GapProfile:
    gaps: np.ndarray
    i_min: int

    @property
    def indices(self) -> np.ndarray:
        return np.arange(self.i_min, self.i_min + len(self.gaps))

    @property
    def max(self) -> float:
        return float(self.gaps.max()) if len(self.gaps) else 0.0

    def window_averages(self) -> np.ndarray:
        """``max_k (1/n) sum_{i=k+1}^{k+n} g_i`` for ``n = 1..len(gaps)``."""
        g = self.gaps
        W = len(g)
        cs = np.concatenate([[0.0], np.cumsum(g)])
        out = np.empty(W)
        for n in range(1, W + 1):
            out[n - 1] = np.max(cs[n:] - cs[:-n]) / n
        return out

    def tail_suprema(self) -> np.ndarray:
        """``sup_{|j| >= |i|} g_j`` indexed by ``|i| = 0..max|i|``."""
        a = np.abs(self.indices)
        R = int(a.max()) if len(a) else 0
        best = np.zeros(R + 1)
        np.maximum.at(best, a, self.gaps)
        return np.maximum.accumulate(best[::-1])[::-1]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["i", "gap"])
            for i, g in zip(self.indices, self.gaps):
                w.writerow([int(i), repr(float(g))])


def gap_profile(sys: SmoothSystem, po: PseudoOrbit, ctrl: StepControl = DEFAULT_CONTROL) -> GapProfile:
    """Gaps ``d(X_{t_i}(x_i), x_{i+1})`` for every consecutive pair in the window."""
    if po.points.shape[1] != sys.dimension:
        raise ValueError("pseudo-orbit dimension does not match the system")
    if len(po) < 2:
        return GapProfile(np.zeros(0), po.i_min)
    try:
        ends = flow_map(sys, po.points[:-1], po.durations[:-1], ctrl)
    except IntegrationError:
        for k in range(len(po) - 1):
            try:
                flow_map(sys, po.points[k], po.durations[k], ctrl)
            except IntegrationError as err:
                raise SegmentIntegrationError(po.i_min + k, err) from err
        raise
    gaps = sys.chart.distance(ends, po.points[1:])
    return GapProfile(np.asarray(gaps, dtype=float), po.i_min)


# --------------------------------------------------------------------------
# class predicates
# --------------------------------------------------------------------------


def is_delta_pseudo(profile: GapProfile, delta: float) -> bool:
    if delta <= 0:
        raise ValueError("delta must be positive")
    return bool(np.all(profile.gaps < delta))


@dataclass(frozen=True)
class AverageVerdict:
    ok: bool
    N: Optional[int]
    worst_averages: np.ndarray = field(repr=False, default=None)


def is_average_pseudo(profile: GapProfile, delta: float) -> AverageVerdict:
    """Smallest ``N`` with every in-window average of length ``n >= N`` below ``delta``.

    ``ok`` requires such an ``N`` no larger than half the window.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    W = len(profile.gaps)
    if W + 1 < 4:
        raise InsufficientDataError("average test needs at least 4 entries")
    worst = profile.window_averages()
    bad = np.nonzero(worst >= delta)[0]
    if len(bad) == 0:
        N = 1
    elif bad[-1] == W - 1:
        return AverageVerdict(False, None, worst)
    else:
        N = int(bad[-1]) + 2
    return AverageVerdict(N <= W / 2, N, worst)


def default_limit_schedule(values, indices) -> Callable[[np.ndarray], np.ndarray]:
    """``eps(|i|) = C / (1 + |i|)`` with ``C`` fit to the inner part of the window.

    The inner part is ``|i| < W/4``; ``C`` is the smallest constant that
    dominates it.
    """
    values = np.asarray(values, dtype=float)
    a = np.abs(np.asarray(indices))
    W = len(values)
    inner = a < W / 4
    C = float(np.max(values[inner] * (1 + a[inner]))) if np.any(inner) else 0.0
    return lambda k: C / (1.0 + np.asarray(k, dtype=float))


def tail_mask(indices, W: Optional[int] = None) -> np.ndarray:
    a = np.abs(np.asarray(indices))
    W = len(a) if W is None else W
    return a >= W / 4


def is_limit_pseudo(profile: GapProfile, schedule: Optional[Callable] = None) -> bool:
    """Tail gaps (``|i| >= W/4``) must sit under a decreasing schedule."""
    g = profile.gaps
    idx = profile.indices
    if schedule is None:
        schedule = default_limit_schedule(g, idx)
    tail = tail_mask(idx)
    bound = schedule(np.abs(idx[tail]))
    return bool(np.all(g[tail] <= bound * (1 + 1e-9) + 1e-300))


def symmetric_averages(profile: GapProfile) -> np.ndarray:
    """``(1/n) sum_{i=-n}^{n} g_i`` for ``n = 1 .. R-1`` on a window ``[-R, R]``."""
    g = profile.gaps
    R = -profile.i_min
    if R <= 0 or profile.i_min + len(g) != R:
        raise InsufficientDataError("asymptotic averages need a symmetric window [-R, R]")
    z = R  # position of index 0 in gaps
    n = np.arange(1, R)
    cs = np.concatenate([[0.0], np.cumsum(g)])
    sums = cs[z + n + 1] - cs[z - n]
    return sums / n


def trend_ok(values, tol: float) -> bool:
    """Last quarter below ``tol`` with a non-positive least-squares slope."""
    v = np.asarray(values, dtype=float)
    if len(v) == 0:
        raise InsufficientDataError("no averages to judge")
    q = max(1, int(math.ceil(len(v) / 4)))
    last = v[-q:]
    if not np.all(last < tol):
        return False
    if len(last) < 2:
        return True
    x = np.arange(len(last), dtype=float)
    slope = np.polyfit(x, last, 1)[0]
    return bool(slope <= 1e-12 * max(1.0, float(np.abs(last).max())))


def is_asymptotic_average_pseudo(profile: GapProfile, tol: float) -> bool:
    if len(profile.gaps) < 3:
        raise InsufficientDataError("window too short")
    return trend_ok(symmetric_averages(profile), tol)


# --------------------------------------------------------------------------
# generators and constructions
# --------------------------------------------------------------------------


def _ball(rng: np.random.Generator, n: int, radius: float) -> np.ndarray:
    v = rng.standard_normal(n)
    nv = np.linalg.norm(v)
    v = v / nv if nv > 0 else np.eye(n)[0]
    return v * radius * rng.random() ** (1.0 / n)


def _inside(bounds, x) -> bool:
    if bounds is None:
        return True
    lo, hi = (np.asarray(b, dtype=float) for b in bounds)
    return bool(np.all(x >= lo) and np.all(x <= hi))


def generate_noisy(sys: SmoothSystem, x0, segments: int, delta: float, durations=1.0, seed: int = 0,
                   i_min: int = 0, neighborhood=None, class_tag: str = "plain",
                   ctrl: StepControl = DEFAULT_CONTROL, noise_scale=None) -> PseudoOrbit:
    """``x_{i+1} = X_{t_i}(x_i) + eta_i`` with ``|eta_i| < delta`` uniform in the ball.

    ``noise_scale`` optionally multiplies the radius per step (an array of
    length ``segments``), which is how sparse or decaying noise is produced.
    ``neighborhood`` is a pair of coordinate bounds; leaving it raises
    :class:`EscapeError`.
    """
    return generate_noisy_many(sys, np.asarray(x0, dtype=float)[None], segments, delta, durations, [seed],
                               i_min, neighborhood, class_tag, ctrl, noise_scale)[0]


def generate_noisy_many(sys: SmoothSystem, X0, segments: int, delta: float, durations=1.0, seeds=(0,),
                        i_min: int = 0, neighborhood=None, class_tag: str = "plain",
                        ctrl: StepControl = DEFAULT_CONTROL, noise_scale=None) -> list:
    """Several noisy pseudo-orbits advanced in lockstep, one seed per orbit.

    Row ``j`` is identical to ``generate_noisy(sys, X0[j], ..., seed=seeds[j])``.
    """
    if delta < 0:
        raise ValueError("delta must be non-negative")
    X0 = np.atleast_2d(sys.chart.check(X0))
    k, n = X0.shape
    if len(seeds) != k:
        raise ValueError("need one seed per initial point")
    rngs = [np.random.default_rng(s) for s in seeds]
    dur = np.broadcast_to(np.asarray(durations, dtype=float), (segments + 1,)).copy()
    scale = np.ones(segments) if noise_scale is None else np.asarray(noise_scale, dtype=float)
    pts = np.empty((k, segments + 1, n))
    pts[:, 0] = sys.chart.canonicalize(X0)
    # strictly inside the open ball even after re-integration round-off
    radius = delta * (1.0 - 1e-9)

    def check(step):
        for j in range(k):
            if not _inside(neighborhood, pts[j, step]):
                raise EscapeError(i_min + step, pts[j, step])

    check(0)
    for step in range(segments):
        nxt = flow_map(sys, pts[:, step], dur[step], ctrl)
        if delta > 0:
            nxt = nxt + np.array([_ball(r, n, radius * scale[step]) for r in rngs])
        pts[:, step + 1] = sys.chart.canonicalize(nxt)
        check(step + 1)
    return [PseudoOrbit(pts[j], dur, i_min, class_tag, sys.chart) for j in range(k)]


def orbit_samples(sys: SmoothSystem, x0, i_min: int, i_max: int, duration: float = 1.0,
                  ctrl: StepControl = DEFAULT_CONTROL, class_tag: str = "plain") -> PseudoOrbit:
    """Exact orbit ``x_i = X_{i*duration}(x0)`` on the window ``[i_min, i_max]``."""
    n = sys.dimension
    m = i_max - i_min + 1
    pts = np.empty((m, n))
    z = -i_min
    pts[z] = sys.chart.canonicalize(sys.chart.check(x0))
    for k in range(z + 1, m):
        pts[k] = flow_map(sys, pts[k - 1], duration, ctrl)[0]
    for k in range(z - 1, -1, -1):
        pts[k] = flow_map(sys, pts[k + 1], -duration, ctrl)[0]
    return PseudoOrbit(pts, np.full(m, float(duration)), i_min, class_tag, sys.chart)


def concat_through(sys: SmoothSystem, p, chain: Optional[PseudoOrbit], q, back_len: int, fwd_len: int,
                   delta: Optional[float] = None, ctrl: StepControl = DEFAULT_CONTROL) -> PseudoOrbit:
    """Backward orbit of ``p``, then ``chain``, then the forward orbit of ``q``.

    With the chain ``(z_0, ..., z_K)``: ``x_i = X_i(p)`` for ``i < 0``,
    ``x_i = z_i`` for ``0 <= i < K`` and ``x_i = X_{i-K}(q)`` for ``i >= K``,
    all outer durations 1.  The chain must start at ``p`` and end at ``q``
    up to ``delta`` (default: the chain's own largest gap).
    """
    chart = sys.chart
    p = chart.canonicalize(chart.check(p))
    q = chart.canonicalize(chart.check(q))
    back = orbit_samples(sys, p, -back_len, 0, 1.0, ctrl) if back_len > 0 else None
    fwd = orbit_samples(sys, q, 0, fwd_len, 1.0, ctrl)
    if chain is None or len(chain) <= 1:
        if chain is not None and len(chain) == 1:
            z = chain.points[0]
            if delta is not None and (chart.distance(p, z) >= delta or chart.distance(z, q) >= delta):
                raise JunctionError("single-point chain does not join p to q")
        if chain is None and delta is not None and chart.distance(p, q) >= delta:
            raise JunctionError("p and q differ by more than delta")
        mid_pts = np.zeros((0, sys.dimension))
        mid_dur = np.zeros(0)
    else:
        if delta is None:
            delta = max(gap_profile(sys, chain, ctrl).max, 1e-6)
        j0 = chart.distance(p, chain.points[0])
        j1 = chart.distance(chain.points[-1], q)
        if j0 >= delta or j1 >= delta:
            raise JunctionError(f"junction gaps {float(j0):.3g}, {float(j1):.3g} not below {delta:.3g}")
        mid_pts = chain.points[:-1]
        mid_dur = chain.durations[:-1]
    parts_p = [back.points[:-1]] if back is not None else []
    parts_d = [back.durations[:-1]] if back is not None else []
    pts = np.concatenate(parts_p + [mid_pts, fwd.points])
    dur = np.concatenate(parts_d + [mid_dur, fwd.durations])
    return PseudoOrbit(pts, dur, -back_len, "plain", chart)


def attractor_crossing(sys: SmoothSystem, a, b, back_len: int, fwd_len: int,
                       ctrl: StepControl = DEFAULT_CONTROL) -> PseudoOrbit:
    """``x_i = X_i(a)`` for ``i <= 0`` and ``x_i = X_i(b)`` for ``i > 0``, unit durations.

    With ``a`` in an attractor and ``b`` outside its basin this is a
    limit-pseudo orbit whose only nonzero gap is the junction at ``i = 0``.
    """
    left = orbit_samples(sys, a, -back_len, 0, 1.0, ctrl)
    right = orbit_samples(sys, b, 0, fwd_len, 1.0, ctrl)
    pts = np.concatenate([left.points, right.points[1:]])
    dur = np.ones(len(pts))
    return PseudoOrbit(pts, dur, -back_len, "limit", sys.chart)


def _linear_parts(A, t: float):
    w, P = np.linalg.eig(np.asarray(A, dtype=float))
    if np.any(np.abs(w.imag) > 1e-12):
        raise ValueError("linear pseudo-orbits need real eigenvalues")
    w, P = w.real, P.real
    if np.any(np.abs(w) < 1e-12):
        raise ValueError("linear field must be hyperbolic")
    return w, P, np.linalg.inv(P)


def linear_pseudo_orbit(A, segments: int, delta: float, seed: int = 0, i_min: int = 0,
                        duration: float = 1.0, chart: Optional[Chart] = None, noise_scale=None,
                        class_tag: str = "plain") -> PseudoOrbit:
    """Bounded delta-pseudo orbit of the hyperbolic linear flow ``x' = A x``.

    Noise ``eta_i`` is uniform in the ball of radius ``delta``; stable
    eigen-coordinates are accumulated forward from 0 and unstable ones
    backward from 0, so the sequence stays near the origin while its gaps are
    exactly ``|eta_i|``.  ``noise_scale`` multiplies the radius per step.
    """
    w, P, Pinv = _linear_parts(A, duration)
    n = len(w)
    rng = np.random.default_rng(seed)
    scale = np.ones(segments) if noise_scale is None else np.asarray(noise_scale, dtype=float)
    eta = np.array([_ball(rng, n, delta * (1 - 1e-9) * scale[k]) for k in range(segments)])
    et = Pinv @ eta.T  # eigen-coordinates, shape (n, segments)
    mult = np.exp(w * duration)
    z = np.zeros((n, segments + 1))
    st = w < 0
    for k in range(segments):
        z[st, k + 1] = mult[st] * z[st, k] + et[st, k]
    for k in range(segments - 1, -1, -1):
        z[~st, k] = (z[~st, k + 1] - et[~st, k]) / mult[~st]
    pts = (P @ z).T
    return PseudoOrbit(pts, np.full(segments + 1, duration), i_min, class_tag, chart or Chart.euclidean(n))
