"""Critical orbits, Morse indices, finite-time splitting rates and local manifolds."""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .flow import (DEFAULT_CONTROL, SmoothSystem, StepControl, Trajectory, flow_map,
                   integrate, integrate_variational)
from .periodic import (SHOOT_CONTROL, flow_multiplier_index, return_time, section_axis,
                       shoot_periodic)
from .pseudo_orbit import InsufficientDataError

MARGIN = 1e-6


class NonHyperbolicError(ValueError):
    """A critical orbit with a multiplier (or eigenvalue) on the neutral circle (or axis)."""


class EmptyDiskError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# critical orbits
# --------------------------------------------------------------------------


def _fmt(z) -> str:
    z = complex(z)
    return f"{z.real:.6g}" if abs(z.imag) < 1e-12 else f"{z.real:.6g}{z.imag:+.6g}j"


@dataclass(frozen=True)
class CriticalOrbit:
    kind: str                     # "singularity" or "periodic"
    base: np.ndarray
    period: float
    linearization: np.ndarray
    multipliers: np.ndarray
    residual: float = 0.0

    def __post_init__(self):
        if self.kind not in ("singularity", "periodic"):
            raise ValueError(f"unknown critical orbit kind {self.kind!r}")
        object.__setattr__(self, "base", np.asarray(self.base, dtype=float))
        object.__setattr__(self, "linearization", np.asarray(self.linearization, dtype=float))
        object.__setattr__(self, "multipliers", np.asarray(self.multipliers, dtype=complex))

    @classmethod
    def singularity(cls, base, jacobian, residual: float = 0.0) -> "CriticalOrbit":
        J = np.asarray(jacobian, dtype=float)
        return cls("singularity", base, 0.0, J, np.linalg.eigvals(J), residual)

    @classmethod
    def periodic(cls, base, period: float, monodromy, residual: float = 0.0) -> "CriticalOrbit":
        M = np.asarray(monodromy, dtype=float)
        return cls("periodic", base, float(period), M, np.linalg.eigvals(M), residual)

    @classmethod
    def from_spectrum(cls, kind: str, values, base=None) -> "CriticalOrbit":
        """Orbit with a diagonal linearization, for closed-form examples."""
        values = np.asarray(values, dtype=float)
        base = np.zeros(len(values)) if base is None else base
        if kind == "singularity":
            return cls.singularity(base, np.diag(values))
        return cls.periodic(base, 1.0, np.diag(values))

    @property
    def flow_index(self) -> Optional[int]:
        return flow_multiplier_index(self.multipliers) if self.kind == "periodic" else None

    def _transverse(self) -> np.ndarray:
        if self.kind == "periodic":
            return np.delete(self.multipliers, self.flow_index)
        return self.multipliers

    def offending(self) -> Optional[complex]:
        """First multiplier that breaks hyperbolicity, if any."""
        if self.kind == "periodic":
            if abs(self.multipliers[self.flow_index] - 1.0) > MARGIN:
                return self.multipliers[self.flow_index]
            bad = np.abs(np.abs(self._transverse()) - 1.0) <= MARGIN
        else:
            bad = np.abs(self.multipliers.real) <= MARGIN
        vals = self._transverse()[bad]
        return complex(vals[0]) if len(vals) else None

    @property
    def hyperbolic(self) -> bool:
        return self.offending() is None

    @property
    def index(self) -> Optional[int]:
        return morse_index(self) if self.hyperbolic else None

    def reversed(self) -> "CriticalOrbit":
        """The same orbit for the time-reversed field."""
        if self.kind == "singularity":
            return CriticalOrbit.singularity(self.base, -self.linearization, self.residual)
        return CriticalOrbit.periodic(self.base, self.period, np.linalg.inv(self.linearization), self.residual)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "base": self.base.tolist(), "period": self.period,
                "linearization": self.linearization.tolist(),
                "multipliers": [[float(z.real), float(z.imag)] for z in self.multipliers],
                "index": self.index, "hyperbolic": self.hyperbolic, "residual": self.residual}


def morse_index(o: CriticalOrbit) -> int:
    """Number of contracting directions, the flow direction excluded."""
    bad = o.offending()
    if bad is not None:
        raise NonHyperbolicError(f"{o.kind} at {np.round(o.base, 6).tolist()} is not hyperbolic: "
                                 f"multiplier {_fmt(bad)}")
    if o.kind == "singularity":
        return int(np.sum(o.multipliers.real < 0))
    return int(np.sum(np.abs(o._transverse()) < 1.0))


@dataclass(frozen=True)
class IndexReport:
    constant: bool
    indices: dict

    def to_dict(self) -> dict:
        return {"constant": self.constant, "indices": {str(k): v for k, v in sorted(self.indices.items())}}


def check_index_constancy(orbits: Sequence[CriticalOrbit]) -> IndexReport:
    if len(orbits) == 0:
        raise InsufficientDataError("no orbits to compare")
    counts = Counter(morse_index(o) for o in orbits)
    return IndexReport(len(counts) == 1, dict(counts))


@dataclass(frozen=True)
class CriticalSearch:
    orbits: list
    diagnostics: dict


def _newton_zeros(sys: SmoothSystem, X: np.ndarray, iters: int = 60) -> tuple[np.ndarray, np.ndarray]:
    chart = sys.chart
    X = X.copy()
    norm = np.linalg.norm(sys.f(X), axis=1)
    for _ in range(iters):
        live = norm > 1e-14
        if not np.any(live):
            break
        J = sys.jac(X[live])
        F = sys.f(X[live])
        step = np.einsum("kij,kj->ki", np.linalg.pinv(J, rcond=1e-12), F)
        lam = np.ones(int(live.sum()))
        cur = norm[live]
        Xl = X[live]
        for _ in range(12):
            trial = chart.canonicalize(Xl - lam[:, None] * step)
            tn = np.linalg.norm(sys.f(trial), axis=1)
            better = tn < cur
            if np.all(better | (lam < 1e-3)):
                break
            lam = np.where(better, lam, lam / 2)
        Xl = np.where(better[:, None], trial, Xl)
        idx = np.nonzero(live)[0]
        X[idx] = Xl
        stalled = ~better
        norm[idx] = np.where(better, tn, cur)
        if np.all(stalled):
            break
    return X, norm


def _grid(lo, hi, per_axis: int) -> np.ndarray:
    axes = [lo[k] + (np.arange(per_axis) + 0.5) * (hi[k] - lo[k]) / per_axis for k in range(len(lo))]
    return np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)


def _orbit_samples(sys: SmoothSystem, o: CriticalOrbit, count: int = 64) -> np.ndarray:
    if o.kind == "singularity":
        return o.base[None]
    t = np.linspace(0.0, o.period, count, endpoint=False)
    return flow_map(sys, np.repeat(o.base[None], count, axis=0), t)


def find_critical_orbits(sys: SmoothSystem, region, grid: int = 8, periodic_seeds=None,
                         t_max: float = 50.0, ctrl: StepControl = SHOOT_CONTROL,
                         merge: float = 1e-4) -> CriticalSearch:
    """Singularities from a seeded grid and periodic orbits from section seeds.

    ``region`` is ``(lo, hi)``.  ``periodic_seeds`` is a list of points or of
    ``(point, period_guess)`` pairs; without a guess the first return to the
    section through the point is used.
    """
    lo, hi = (np.asarray(r, dtype=float) for r in region)
    chart = sys.chart
    diag = {"singularity_seeds": 0, "singularity_dropped": 0, "periodic_seeds": 0, "periodic_dropped": 0}
    found = []
    seeds = _grid(lo, hi, grid) if grid else np.zeros((0, len(lo)))
    diag["singularity_seeds"] = len(seeds)
    if len(seeds):
        X, norm = _newton_zeros(sys, seeds)
        X = chart.canonicalize(X)
        ok = norm < 1e-9
        inside = np.all((X >= lo - 1e-9) & (X <= hi + 1e-9), axis=1)
        ok &= inside
        diag["singularity_dropped"] = int((~ok).sum())
        for x, r in zip(X[ok], norm[ok]):
            if any(o.kind == "singularity" and chart.distance(o.base, x) < merge for o in found):
                continue
            found.append(CriticalOrbit.singularity(x, sys.jac(x), float(r)))
    if periodic_seeds:
        pts, guesses = [], []
        for s in periodic_seeds:
            if isinstance(s, tuple) and len(s) == 2 and np.ndim(s[1]) == 0:
                pts.append(np.asarray(s[0], dtype=float))
                guesses.append(float(s[1]))
            else:
                pts.append(np.asarray(s, dtype=float))
                guesses.append(None)
        diag["periodic_seeds"] = len(pts)
        axes, T0, keep = [], [], []
        for k, (x, g) in enumerate(zip(pts, guesses)):
            ax = section_axis(sys, x)
            if g is None:
                g = return_time(sys, x, ax, t_max=t_max)
            if g is None or np.linalg.norm(sys.f(x)) < 1e-9:
                continue
            axes.append(ax)
            T0.append(g)
            keep.append(k)
        dropped = len(pts) - len(keep)
        if keep:
            res = shoot_periodic(sys, np.array([pts[k] for k in keep]), np.array(T0), np.array(axes), ctrl=ctrl)
            periodic = []
            for j in range(len(keep)):
                if not res.converged[j] or res.periods[j] <= 0:
                    dropped += 1
                    continue
                o = CriticalOrbit.periodic(res.points[j], res.periods[j], res.monodromy[j], float(res.residuals[j]))
                periodic.append(o)
            dropped += _merge_periodic(sys, periodic, found, merge)
        diag["periodic_dropped"] = dropped
    return CriticalSearch(found, diag)


def _merge_periodic(sys, candidates, found, merge) -> int:
    """Append distinct periodic orbits to ``found``; returns the number merged away."""
    merged = 0
    accepted = []
    for o in candidates:
        dup = False
        for prev, samples in accepted:
            if abs(prev.period - o.period) > 1e-3 * max(1.0, o.period):
                continue
            if np.min(sys.chart.distance(samples, o.base)) < merge:
                dup = True
                break
        if dup:
            merged += 1
            continue
        accepted.append((o, _orbit_samples(sys, o, max(64, int(o.period / 0.005)))))
        found.append(o)
    return merged


# --------------------------------------------------------------------------
# splitting rates
# --------------------------------------------------------------------------


def _fit(t, y):
    A = np.column_stack([t, np.ones_like(t)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss if ss > 0 else 0.0
    return float(coef[0]), r2, float(np.max(np.abs(resid)))


@dataclass(frozen=True)
class SectionalRecord:
    ok: bool
    worst_rate: float
    planes_tested: int
    rates: tuple = ()

    def to_dict(self) -> dict:
        return {"ok": self.ok, "worst_rate": self.worst_rate, "planes_tested": self.planes_tested}


@dataclass(frozen=True)
class SplittingEstimate:
    window: float
    dims: tuple
    K_contract: Optional[float]
    lambda_contract: Optional[float]
    K_dom: Optional[float]
    lambda_dom: Optional[float]
    conclusive: bool
    slopes: dict
    r2: dict
    sectional: Optional[SectionalRecord] = None

    def to_dict(self) -> dict:
        return {"window": self.window, "dims": list(self.dims), "K_contract": self.K_contract,
                "lambda_contract": self.lambda_contract, "K_dom": self.K_dom, "lambda_dom": self.lambda_dom,
                "conclusive": self.conclusive, "slopes": self.slopes, "r2": self.r2,
                "sectional": None if self.sectional is None else self.sectional.to_dict()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _random_frame(n: int, p: int, rng) -> np.ndarray:
    Q, R = np.linalg.qr(rng.standard_normal((n, p)))
    return Q * np.sign(np.diag(R))


def _traj_setup(traj: Trajectory):
    if isinstance(traj, Trajectory):
        return traj.initial, float(traj.span), traj.step_control
    x0, span = traj
    return np.asarray(x0, dtype=float), float(span), DEFAULT_CONTROL


def estimate_splitting(sys: SmoothSystem, traj, s_dim: int, seed: int = 0, r2_min: float = 0.9,
                       renorm: float = 1.0) -> SplittingEstimate:
    """Contraction and domination rates from the QR growth of a random frame.

    Column ``j`` of the QR factorization of ``DX_t W`` grows like the
    ``j``-th singular value.  ``traj`` is a :class:`Trajectory` or an
    ``(x0, span)`` pair.
    """
    x0, span, ctrl = _traj_setup(traj)
    n = sys.dimension
    if span < 10:
        raise ValueError("splitting estimates need a window of at least 10 time units")
    if not 1 <= s_dim < n:
        raise ValueError(f"s_dim must lie in [1, {n - 1}]")
    rng = np.random.default_rng(seed)
    W = _random_frame(n, n, rng)
    cocycle = integrate_variational(sys, x0, span, ctrl, frame=W, renorm=renorm)
    t = cocycle.base.times
    G = cocycle.log_growth()
    j = n - s_dim
    sc, r2c, resc = _fit(t, G[:, j])
    sd, r2d, resd = _fit(t, G[:, j] - G[:, j - 1])
    slopes = {"contract": sc, "dom": sd}
    r2 = {"contract": r2c, "dom": r2d}
    conclusive = r2c > r2_min and r2d > r2_min and sc < 0 and sd < 0
    if not conclusive:
        return SplittingEstimate(span, (s_dim, n - s_dim), None, None, None, None, False, slopes, r2)
    return SplittingEstimate(span, (s_dim, n - s_dim), float(np.exp(resc)), -sc, float(np.exp(resd)), -sd,
                             True, slopes, r2)


def check_sectional_expansion(sys: SmoothSystem, traj, c_basis, planes: int = 20, seed: int = 0,
                              lambda_min: float = 1e-3, renorm: float = 1.0) -> SectionalRecord:
    """Area growth rates of random 2-planes inside ``span(c_basis)``."""
    C = np.asarray(c_basis, dtype=float)
    if C.ndim != 2 or C.shape[1] < 2:
        raise ValueError("sectional expansion needs a central bundle of dimension at least 2")
    x0, span, ctrl = _traj_setup(traj)
    n = sys.dimension
    Qc, _ = np.linalg.qr(C)
    rng = np.random.default_rng(seed)
    frames = []
    for _ in range(planes):
        frames.append(Qc @ _random_frame(C.shape[1], 2, rng))
    cocycle = integrate_variational(sys, x0, span, ctrl, renorm=renorm)
    G = cocycle.push_frames(np.array(frames))
    t = np.sort(np.abs(cocycle.base.times))
    rates = np.array([_fit(t, G[p].sum(axis=1))[0] for p in range(planes)])
    worst = float(rates.min())
    return SectionalRecord(bool(np.all(rates >= lambda_min)), worst, planes, tuple(float(r) for r in rates))


# --------------------------------------------------------------------------
# local invariant manifolds
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifoldDisk:
    orbit: CriticalOrbit
    side: str
    eps: float
    samples: np.ndarray
    branches: np.ndarray          # branch label of each sample, samples ordered along each branch
    horizon: float
    dropped: int = 0

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["branch"] + [f"x{k}" for k in range(self.samples.shape[1])])
            for b, p in zip(self.branches, self.samples):
                w.writerow([int(b)] + [repr(float(v)) for v in p])


def _eigen_directions(o: CriticalOrbit, side: str) -> np.ndarray:
    vals, vecs = np.linalg.eig(o.linearization)
    pick = vals.real < 0 if side == "stable" else vals.real > 0
    if not np.any(pick):
        return np.zeros((len(vals), 0))
    V = vecs[:, pick]
    # real basis of the invariant subspace
    basis = np.concatenate([V.real, V.imag], axis=1)
    U, s, _ = np.linalg.svd(basis, full_matrices=False)
    return U[:, s > 1e-10 * s.max()][:, :int(pick.sum())]


def verify_disk_points(sys: SmoothSystem, o: CriticalOrbit, side: str, points, eps: float, horizon: float,
                       step: float = 0.05, ctrl: StepControl = StepControl(tol=1e-11)) -> np.ndarray:
    """Mask of points whose forward (stable) or backward (unstable) orbit stays within ``eps`` of ``o``."""
    P = np.atleast_2d(np.asarray(points, dtype=float))
    sign = 1.0 if side == "stable" else -1.0
    ok = sys.chart.distance(P, o.base) < eps
    cur = P.copy()
    for _ in range(int(np.ceil(horizon / step))):
        cur = flow_map(sys, cur, sign * step, ctrl)
        ok &= sys.chart.distance(cur, o.base) < eps
    return ok


def local_manifold(sys: SmoothSystem, o: CriticalOrbit, side: str, eps: float, samples: int = 50,
                   horizon: float = 10.0, ctrl: StepControl = StepControl(tol=1e-11)) -> ManifoldDisk:
    """Sampled local stable or unstable manifold of a hyperbolic singularity.

    Seeds sit on the linear eigenspace at radius ``1e-3 * eps``; they are
    carried outward by the flow (backward for the stable side) and the part
    within ``eps`` is kept.  Every sample is re-verified over ``horizon``.
    """
    if side not in ("stable", "unstable"):
        raise ValueError("side must be 'stable' or 'unstable'")
    morse_index(o)
    if o.kind != "singularity":
        raise NotImplementedError("local manifolds are computed for singularities only")
    E = _eigen_directions(o, side)
    k = E.shape[1]
    if k == 0:
        raise ValueError(f"the {side} manifold of this singularity is a single point")
    r0 = 1e-3 * eps
    if k == 1:
        dirs = np.array([E[:, 0], -E[:, 0]])
    else:
        rng = np.random.default_rng(0)
        c = rng.standard_normal((max(8, samples // 4), k))
        dirs = (c / np.linalg.norm(c, axis=1, keepdims=True)) @ E.T
    seeds = o.base + r0 * dirs
    flow_sys = sys if side == "unstable" else sys.negated()
    pts, labels = [], []
    per_branch = max(2, int(np.ceil(samples / len(dirs))))
    for b, s in enumerate(seeds):
        traj = integrate(flow_sys, s, _exit_time(flow_sys, s, o.base, eps, ctrl), ctrl)
        d = sys.chart.distance(traj.points, o.base)
        inside = np.nonzero(d < eps)[0]
        # keep the initial excursion only
        stop = np.nonzero(np.diff(inside) > 1)[0]
        if len(stop):
            inside = inside[:stop[0] + 1]
        path = traj.points[inside]
        if len(path) == 0:
            continue
        # evenly spaced by distance from the orbit
        dist = d[inside]
        targets = np.linspace(dist[0], dist[-1] * 0.98, per_branch)
        j = np.searchsorted(np.maximum.accumulate(dist), targets)
        j = np.unique(np.clip(j, 0, len(path) - 1))
        pts.append(path[j])
        labels.append(np.full(len(j), b))
    if not pts:
        raise EmptyDiskError("no manifold samples")
    P = np.concatenate(pts)
    L = np.concatenate(labels)
    ok = verify_disk_points(sys, o, side, P, eps, horizon)
    if not np.any(ok):
        raise EmptyDiskError("every manifold sample failed verification")
    return ManifoldDisk(o, side, eps, P[ok], L[ok], horizon, int((~ok).sum()))


def _exit_time(sys, x, base, eps, ctrl, t_max: float = 200.0) -> float:
    """Integration time long enough for ``x`` to leave the ``eps``-ball."""
    t = 1.0
    while t < t_max:
        y = flow_map(sys, x, t, ctrl)
        if sys.chart.distance(y, base) >= eps:
            return t
        t *= 2
    return t_max


# --------------------------------------------------------------------------
# intersections
# --------------------------------------------------------------------------


def _propagate(sys: SmoothSystem, disk: ManifoldDisk, span: float, ctrl):
    """Globalized branches: orbits of the innermost sample of each branch.

    Returns the system the curves follow, the curves and their time steps.
    """
    flow_sys = sys if disk.side == "unstable" else sys.negated()
    curves, steps = [], []
    for b in np.unique(disk.branches):
        P = disk.samples[disk.branches == b]
        traj = integrate(flow_sys, P[0], span, ctrl)
        # the singularity lies on both of its manifolds; flowing it is a no-op
        curves.append(np.vstack([disk.orbit.base, traj.points]))
        steps.append(np.r_[1.0, np.diff(traj.times)])
    return flow_sys, curves, np.concatenate(steps)


def _ghosts(chart, P: np.ndarray):
    """Copies of ``P`` shifted by one period on each periodic axis."""
    if chart.kind != "torus":
        return P, np.arange(len(P))
    shifts = [[0.0] if p is None else [-p, 0.0, p] for p in chart.periods]
    grids = np.stack([g.ravel() for g in np.meshgrid(*shifts, indexing="ij")], axis=1)
    return (np.concatenate([P + s for s in grids]), np.tile(np.arange(len(P)), len(grids)))


def _segment_closest(p0, u, q0, v):
    """Closest points between segments ``p0 + s u`` and ``q0 + t v`` (rows), ``s, t`` in [0, 1]."""
    w = p0 - q0
    a = np.einsum("ij,ij->i", u, u)
    b = np.einsum("ij,ij->i", u, v)
    c = np.einsum("ij,ij->i", v, v)
    d = np.einsum("ij,ij->i", u, w)
    e = np.einsum("ij,ij->i", v, w)
    den = a * c - b * b
    safe = lambda num, den: np.divide(num, den, out=np.zeros_like(num), where=den > 1e-30)
    s = np.clip(safe(b * e - c * d, den), 0.0, 1.0)
    t = np.clip(safe(b * s + e, c), 0.0, 1.0)
    s = np.clip(safe(b * t - d, a), 0.0, 1.0)
    return p0 + s[:, None] * u, q0 + t[:, None] * v


def _segments(chart, curves):
    starts = np.concatenate([c[:-1] for c in curves])
    ends = np.concatenate([c[1:] for c in curves])
    return chart.canonicalize(starts), chart.displacement(ends, starts)


def detect_intersection(sys: SmoothSystem, a: ManifoldDisk, b: ManifoldDisk, tol: float = 1e-4,
                        span: float = 20.0, ctrl: StepControl = StepControl(tol=1e-11)) -> np.ndarray:
    """Points where the globalized manifolds of ``a`` and ``b`` come within ``tol``.

    Candidate pairs of nearby curve segments are located on the chords, then
    both chord parameters are pushed back onto the true orbits by the flow.
    The reported point is the midpoint of the two curve points.  An empty
    result only means nothing was found at this resolution.
    """
    if a.side == b.side:
        raise ValueError("intersection needs one stable and one unstable disk")
    chart = sys.chart
    fa, ca, ha = _propagate(sys, a, span, ctrl)
    fb, cb, hb = _propagate(sys, b, span, ctrl)
    A, U = _segments(chart, ca)
    B, V = _segments(chart, cb)
    la = np.linalg.norm(U, axis=1).max()
    lb = np.linalg.norm(V, axis=1).max()
    Bg, owner = _ghosts(chart, B)
    pairs = cKDTree(A).query_ball_tree(cKDTree(Bg), tol + la + lb)
    ii = np.repeat(np.arange(len(A)), [len(h) for h in pairs])
    jj = np.fromiter((h for hits in pairs for h in hits), dtype=int, count=len(ii))
    empty = np.zeros((0, sys.dimension))
    if len(ii) == 0:
        return empty
    x, y = _segment_closest(A[ii], U[ii], Bg[jj], V[owner[jj]])
    # chord sag is quadratic in the step; keep pairs that could be true hits
    sag = 0.25 * (la ** 2 + lb ** 2) + tol
    near = np.linalg.norm(x - y, axis=1) < sag
    if not np.any(near):
        return empty
    ii, jj, x, y = ii[near], jj[near], x[near], y[near]
    kb = owner[jj]
    s = np.linalg.norm(x - A[ii], axis=1) / np.maximum(np.linalg.norm(U[ii], axis=1), 1e-300)
    t = np.linalg.norm(y - Bg[jj], axis=1) / np.maximum(np.linalg.norm(V[kb], axis=1), 1e-300)
    xa = flow_map(fa, A[ii], s * ha[ii], ctrl)
    yb = flow_map(fb, B[kb], t * hb[kb], ctrl)
    gap = chart.displacement(xa, yb)
    close = np.linalg.norm(gap, axis=1) < tol
    if not np.any(close):
        return empty
    mid = chart.nearest_image(xa[close], yb[close])[0]
    P = chart.canonicalize(0.5 * (xa[close] + mid))
    return np.unique(np.round(P, 12), axis=0)


# --------------------------------------------------------------------------
# strong homogeneity (sampled)
# --------------------------------------------------------------------------


def bump_perturbation(sys: SmoothSystem, center, direction, eta: float, radius: float) -> SmoothSystem:
    """``X + eta * (1 - r^2)^3 * direction`` on the ball of ``radius`` around ``center`` (r scaled)."""
    chart = sys.chart
    c = np.asarray(center, dtype=float)
    w = np.asarray(direction, dtype=float)
    w = w / np.linalg.norm(w)
    base_f, base_J = sys.field, sys.jacobian

    def parts(x):
        y, D = chart.canonicalize_with_derivative(x)
        disp = chart.displacement(y, c) / radius
        r2 = np.sum(disp ** 2, axis=-1)
        inside = r2 < 1.0
        phi = np.where(inside, (1.0 - r2) ** 3, 0.0)
        grad = np.where(inside[:, None], -6.0 * ((1.0 - r2) ** 2)[:, None] * disp / radius, 0.0)
        return D, eta * phi[:, None] * w, eta * w[None, :, None] * grad[:, None, :]

    def field(x):
        D, b, _ = parts(x)
        if D is not None:
            b = np.linalg.solve(D, b[..., None])[..., 0]
        return base_f(x) + b

    def jacobian(x):
        D, _, Jb = parts(x)
        if D is not None:
            Jb = np.linalg.solve(D, Jb @ D)
        return base_J(x) + Jb

    params = dict(sys.params, bump_center=c.tolist(), bump_direction=w.tolist(), eta=eta, radius=radius)
    return replace(sys, name=f"{sys.name}+bump", field=field, jacobian=jacobian, params=params)


def bump_family(sys: SmoothSystem, region, count: int = 5, eta: float = 1e-3, radius: float = 0.15,
                seed: int = 0) -> list:
    """Seeded bump perturbations with centers inside ``region`` (shrunk by ``radius``)."""
    lo, hi = (np.asarray(r, dtype=float) for r in region)
    rng = np.random.default_rng(seed)
    fam = []
    for _ in range(count):
        c = lo + radius + (hi - lo - 2 * radius) * rng.random(len(lo))
        w = rng.standard_normal(len(lo))
        fam.append(bump_perturbation(sys, c, w, eta, radius))
    return fam


@dataclass(frozen=True)
class HomogeneityReport:
    homogeneous: bool
    observed_indices: dict
    orbit_counts: tuple

    def to_dict(self) -> dict:
        return {"homogeneous": self.homogeneous,
                "observed_indices": {str(k): v for k, v in sorted(self.observed_indices.items())},
                "orbit_counts": list(self.orbit_counts)}


def sampled_strong_homogeneity(family: Sequence[SmoothSystem], region, k: int, grid: int = 0,
                               periodic_seeds=None, kinds=("periodic",)) -> HomogeneityReport:
    """Morse indices of critical orbits across a finite family of fields.

    Only orbits whose kind is listed in ``kinds`` count.  Homogeneous means at
    least one orbit was seen and every index equals ``k``.  This samples the
    neighborhood of fields; it proves nothing about it.
    """
    if len(family) == 0:
        raise InsufficientDataError("empty perturbation family")
    seen = Counter()
    counts = []
    for s in family:
        res = find_critical_orbits(s, region, grid=grid, periodic_seeds=periodic_seeds)
        orbits = [o for o in res.orbits if o.kind in kinds]
        counts.append(len(orbits))
        for o in orbits:
            seen[o.index if o.hyperbolic else "nonhyperbolic"] += 1
    homogeneous = bool(seen) and set(seen) == {k}
    return HomogeneityReport(homogeneous, dict(seen), tuple(counts))


def orbits_json(orbits: Sequence[CriticalOrbit]) -> str:
    return json.dumps([o.to_dict() for o in orbits], indent=2, sort_keys=True)
