"""Set-oriented chain dynamics on box covers and plain digraphs.

The graph algorithms work on any :class:`Digraph`; a :class:`TransitionGraph`
wraps one together with the box geometry it came from.

Attractor theory is done on the *viable* part of a node set, meaning the
nodes that admit an infinite forward walk.  On graphs without dead ends that
is the whole set.  Dead ends model orbits that leave the region, and they can
never belong to an invariant set.
"""

from __future__ import annotations

import csv
import json
import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from itertools import product
from typing import Iterable, Optional

import numpy as np

from .flow import DEFAULT_CONTROL, SmoothSystem, StepControl, flow_map

ENUMERATION_LIMIT = 10_000


class AttractorLimitError(RuntimeError):
    """Too many candidate attractors; use a coarser cover."""


# --------------------------------------------------------------------------
# digraphs
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Digraph:
    """Adjacency lists over nodes ``0..n-1`` (sorted, duplicate free)."""

    succ: tuple
    escaping: frozenset = frozenset()

    @classmethod
    def from_edges(cls, n: int, edges: Iterable, escaping: Iterable = ()) -> "Digraph":
        out = [set() for _ in range(n)]
        for a, b in edges:
            out[int(a)].add(int(b))
        return cls(tuple(tuple(sorted(s)) for s in out), frozenset(int(e) for e in escaping))

    @classmethod
    def from_adjacency(cls, M) -> "Digraph":
        M = np.asarray(M, dtype=bool)
        return cls(tuple(tuple(int(j) for j in np.nonzero(row)[0]) for row in M))

    @property
    def n(self) -> int:
        return len(self.succ)

    def edges(self):
        for a, out in enumerate(self.succ):
            for b in out:
                yield a, b

    @property
    def edge_count(self) -> int:
        return sum(len(s) for s in self.succ)

    @cached_property
    def _pred(self) -> tuple:
        p = [[] for _ in range(self.n)]
        for a, out in enumerate(self.succ):
            for b in out:
                p[b].append(a)
        return tuple(tuple(x) for x in p)

    def pred(self) -> tuple:
        return self._pred

    def induced(self, nodes) -> tuple["Digraph", np.ndarray]:
        """Subgraph on ``nodes`` (relabelled ``0..k-1``) and the label map."""
        keep = np.array(sorted(set(int(v) for v in nodes)), dtype=int)
        pos = {int(v): i for i, v in enumerate(keep)}
        succ = tuple(tuple(pos[w] for w in self.succ[v] if w in pos) for v in keep)
        esc = frozenset(pos[v] for v in self.escaping if v in pos)
        return Digraph(succ, esc), keep


def _graph(g) -> Digraph:
    return g.graph if isinstance(g, TransitionGraph) else g


def strongly_connected_components(g) -> list:
    """Tarjan's algorithm, iterative.  Components come out sinks first."""
    g = _graph(g)
    n = g.n
    index = [-1] * n
    low = [0] * n
    on_stack = [False] * n
    stack = []
    comps = []
    counter = 0
    for root in range(n):
        if index[root] != -1:
            continue
        work = [(root, 0)]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack[root] = True
        while work:
            v, i = work[-1]
            out = g.succ[v]
            if i < len(out):
                work[-1] = (v, i + 1)
                w = out[i]
                if index[w] == -1:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack[w] = True
                    work.append((w, 0))
                elif on_stack[w] and index[w] < low[v]:
                    low[v] = index[w]
                continue
            work.pop()
            if work:
                u = work[-1][0]
                if low[v] < low[u]:
                    low[u] = low[v]
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack[w] = False
                    comp.append(w)
                    if w == v:
                        break
                comps.append(sorted(comp))
    return comps


def _nontrivial(g: Digraph, comp) -> bool:
    return len(comp) > 1 or comp[0] in g.succ[comp[0]]


def chain_recurrent_set(g) -> np.ndarray:
    """Nodes lying on a closed walk: SCCs with at least one edge."""
    g = _graph(g)
    out = [v for c in strongly_connected_components(g) if _nontrivial(g, c) for v in c]
    return np.array(sorted(out), dtype=int)


def reach(g, sources, reverse: bool = False, within: Optional[np.ndarray] = None) -> np.ndarray:
    """Boolean mask of nodes reachable from ``sources`` (including them)."""
    g = _graph(g)
    adj = g.pred() if reverse else g.succ
    seen = np.zeros(g.n, dtype=bool)
    q = deque()
    for s in sources:
        s = int(s)
        if not seen[s] and (within is None or within[s]):
            seen[s] = True
            q.append(s)
    while q:
        v = q.popleft()
        for w in adj[v]:
            if not seen[w] and (within is None or within[w]):
                seen[w] = True
                q.append(w)
    return seen


def _region(g: Digraph, region) -> tuple[Digraph, np.ndarray]:
    if region is None:
        return g, np.arange(g.n)
    region = list(region)
    if not region:
        raise ValueError("region must be nonempty")
    return g.induced(region)


def is_chain_transitive(g, region=None) -> bool:
    """True iff ``region`` lies in one strongly connected component of the induced subgraph."""
    g = _graph(g)
    sub, _ = _region(g, region)
    if sub.n == 0:
        raise ValueError("region must be nonempty")
    return bool(reach(sub, [0]).all() and reach(sub, [0], reverse=True).all())


def omega_limit(g, B, reverse: bool = False) -> np.ndarray:
    """Nodes visited at arbitrarily late steps by walks from ``B``.

    These are the nodes reachable from a closed walk that is reachable from
    ``B``.  ``reverse`` gives the alpha-limit.
    """
    g = _graph(g)
    B = [int(b) for b in B]
    if not B:
        raise ValueError("B must be nonempty")
    if reverse:
        g = Digraph(tuple(tuple(sorted(p)) for p in g.pred()), g.escaping)
    cr = np.zeros(g.n, dtype=bool)
    cr[chain_recurrent_set(g)] = True
    seeds = np.nonzero(reach(g, B) & cr)[0]
    return np.nonzero(reach(g, seeds))[0]


def invariant_part(g, S) -> np.ndarray:
    """Nodes of ``S`` lying on a bi-infinite walk inside ``S``."""
    g = _graph(g)
    inside = np.zeros(g.n, dtype=bool)
    inside[list(S)] = True
    pred = g.pred()
    outdeg = np.zeros(g.n, dtype=int)
    indeg = np.zeros(g.n, dtype=int)
    for a, b in g.edges():
        if inside[a] and inside[b]:
            outdeg[a] += 1
            indeg[b] += 1
    q = deque(v for v in np.nonzero(inside)[0] if outdeg[v] == 0 or indeg[v] == 0)
    for v in q:
        inside[v] = False
    while q:
        v = q.popleft()
        for w in g.succ[v]:
            if inside[w]:
                indeg[w] -= 1
                if indeg[w] == 0:
                    inside[w] = False
                    q.append(w)
        for w in pred[v]:
            if inside[w]:
                outdeg[w] -= 1
                if outdeg[w] == 0:
                    inside[w] = False
                    q.append(w)
    return np.nonzero(inside)[0]


def isolated_part(g) -> np.ndarray:
    """Maximal invariant node set avoiding escaping nodes: the surrogate of ``Inv(U)``."""
    g = _graph(g)
    keep = [v for v in range(g.n) if v not in g.escaping]
    return invariant_part(g, keep) if keep else np.zeros(0, dtype=int)


def viable_set(g, region=None) -> np.ndarray:
    """Nodes of ``region`` with an infinite forward walk inside it."""
    g = _graph(g)
    sub, labels = _region(g, region)
    cr = chain_recurrent_set(sub)
    return labels[np.nonzero(reach(sub, cr, reverse=True))[0]]


# --------------------------------------------------------------------------
# attractors
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class AttractorRecord:
    """An attractor ``A`` with its basin and its dual repeller ``A*``.

    Node labels refer to the graph the records were computed on.
    """

    boxes: np.ndarray
    neighborhood: np.ndarray
    dual: np.ndarray
    is_global: bool = False

    def to_dict(self) -> dict:
        return {"boxes": self.boxes.tolist(), "neighborhood": self.neighborhood.tolist(),
                "dual": self.dual.tolist(), "global": self.is_global}


@dataclass(frozen=True)
class _Lattice:
    sub: Digraph
    labels: np.ndarray
    viable: np.ndarray          # labels of viable nodes
    morse: list                 # Morse sets (sub-labels, within viable part)
    above: list                 # above[i] = indices of Morse sets reachable from set i (including i)
    vsub: Digraph               # viable subgraph (labels 0..k-1)
    vlabels: np.ndarray         # vsub label -> sub label


def _lattice(g: Digraph, region) -> _Lattice:
    sub, labels = _region(g, region)
    cr = chain_recurrent_set(sub)
    via = np.nonzero(reach(sub, cr, reverse=True))[0]
    vsub, vl = sub.induced(via)
    comps = [c for c in strongly_connected_components(vsub) if _nontrivial(vsub, c)]
    comp_of = {v: i for i, c in enumerate(comps) for v in c}
    above = []
    for c in comps:
        r = reach(vsub, c)
        above.append(sorted({comp_of[v] for v in np.nonzero(r)[0] if v in comp_of}))
    return _Lattice(sub, labels, labels[vl], comps, above, vsub, vl)


def _upsets(lat: _Lattice, limit: int):
    """Nonempty sets of Morse sets closed under reachability."""
    k = len(lat.morse)
    # Tarjan lists sinks first, so every set only reaches sets listed before it
    order = list(range(k))
    out = []

    def rec(pos, chosen):
        if len(out) > limit:
            raise AttractorLimitError(
                f"more than {limit} candidate attractors; use a coarser cover")
        if pos == k:
            if chosen:
                out.append(frozenset(chosen))
            return
        i = order[pos]
        if all(j in chosen for j in lat.above[i] if j != i):
            chosen.add(i)
            rec(pos + 1, chosen)
            chosen.discard(i)
        rec(pos + 1, chosen)

    rec(0, set())
    return out


def attractors(g, region=None, limit: int = ENUMERATION_LIMIT) -> list:
    """Every attractor of the viable part of ``region`` (default: all nodes).

    An attractor is the omega-limit of a nonempty forward-invariant node set.
    Equivalently it is the forward closure of a reachability-closed family of
    Morse sets (strongly connected components with an edge).  The global
    attractor, the forward closure of all Morse sets, comes first.  Candidates
    containing escaping nodes are dropped.
    """
    g = _graph(g)
    key = None if region is None else tuple(sorted(int(v) for v in region))
    return list(_attractors(g, key, limit))


@lru_cache(maxsize=64)
def _attractors(g: Digraph, region, limit: int) -> tuple:
    g = _graph(g)
    lat = _lattice(g, region)
    vs = lat.vsub
    k = vs.n
    records = []
    sets = _upsets(lat, limit)
    sets.sort(key=lambda s: (-len(s), sorted(s)))
    esc = np.zeros(k, dtype=bool)
    esc_sub = lat.sub.escaping
    for i, v in enumerate(lat.vlabels):
        esc[i] = v in esc_sub
    comp_nodes = [np.array(c) for c in lat.morse]
    for U in sets:
        members = np.concatenate([comp_nodes[i] for i in sorted(U)])
        A = reach(vs, members)
        if np.any(A & esc):
            continue
        # basin: nodes whose reachable Morse sets all lie in U
        outside = [comp_nodes[i] for i in range(len(lat.morse)) if i not in U]
        bad = reach(vs, np.concatenate(outside), reverse=True) if outside else np.zeros(k, dtype=bool)
        basin = ~bad
        dual = np.zeros(k, dtype=bool)
        dual[invariant_part(vs, np.nonzero(~A)[0])] = True
        to_lab = lambda mask: lat.labels[lat.vlabels[np.nonzero(mask)[0]]]
        rec = AttractorRecord(to_lab(A), to_lab(basin), to_lab(dual), bool(A.all()) or len(U) == len(lat.morse))
        _check_record(vs, A, basin, dual)
        records.append(rec)
    return tuple(records)


def _check_record(vs: Digraph, A, basin, dual):
    for a, b in vs.edges():
        if A[a] and not A[b]:
            raise AssertionError("attractor is not forward closed")
    if np.any(A & dual):
        raise AssertionError("attractor meets its dual")
    if np.any(A & ~basin):
        raise AssertionError("attractor not inside its basin")


def minimal_attractors(g, region=None, limit: int = ENUMERATION_LIMIT) -> list:
    recs = attractors(g, region, limit)
    sets = [set(r.boxes.tolist()) for r in recs]
    return [r for r, s in zip(recs, sets) if not any(t < s for t in sets)]


@dataclass(frozen=True)
class ConleyCheck:
    holds: Optional[bool]
    witness: Optional[int]
    chain_recurrent: np.ndarray
    intersection: Optional[np.ndarray]
    attractor_count: int
    note: str = ""


def check_conley_identity(g, region=None, limit: int = ENUMERATION_LIMIT) -> ConleyCheck:
    """Compare the chain recurrent set with the intersection of ``A ∪ A*`` over all attractors."""
    g = _graph(g)
    sub, labels = _region(g, region)
    cr = labels[chain_recurrent_set(sub)]
    try:
        recs = attractors(g, region, limit)
    except AttractorLimitError as err:
        return ConleyCheck(None, None, cr, None, 0, f"inconclusive: {err}")
    rhs = set(viable_set(g, region).tolist())
    for r in recs:
        rhs &= set(r.boxes.tolist()) | set(r.dual.tolist())
    lhs = set(cr.tolist())
    diff = sorted(lhs ^ rhs)
    inter = np.array(sorted(rhs), dtype=int)
    return ConleyCheck(not diff, diff[0] if diff else None, cr, inter, len(recs))


@dataclass(frozen=True)
class TransitivityCheck:
    chain_transitive: bool
    has_proper_attractor: bool
    consistent: bool
    viable: np.ndarray


def check_transitive_iff_no_proper_attractor(g, region=None, limit: int = ENUMERATION_LIMIT) -> TransitivityCheck:
    """Chain transitivity of the viable part against existence of a proper attractor."""
    g = _graph(g)
    via = viable_set(g, region)
    if len(via) == 0:
        return TransitivityCheck(True, False, True, via)
    ct = is_chain_transitive(g, via)
    try:
        recs = attractors(g, region, limit)
        proper = any(len(r.boxes) != len(via) for r in recs)
    except AttractorLimitError:
        # minimal attractors come from terminal Morse sets; one smaller than
        # the viable part is enough
        lat = _lattice(g, region)
        proper = False
        for i, c in enumerate(lat.morse):
            if lat.above[i] == [i]:
                A = reach(lat.vsub, c)
                if not A.all():
                    proper = True
                    break
    return TransitivityCheck(ct, proper, ct != proper, via)


# --------------------------------------------------------------------------
# Hausdorff distance
# --------------------------------------------------------------------------


def _one_sided(A, B, chart, chunk=2048):
    worst = 0.0
    for k in range(0, len(A), chunk):
        a = A[k:k + chunk]
        if chart is None:
            d = np.sqrt(((a[:, None, :] - B[None, :, :]) ** 2).sum(-1))
        else:
            d = chart.distance(a[:, None, :], B[None, :, :])
        worst = max(worst, float(d.min(axis=1).max()))
    return worst


def hausdorff_distance(A, B, chart=None) -> float:
    """``max(sup_a d(a, B), sup_b d(b, A))`` over finite point sets."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    if B.ndim == 1:
        B = B[:, None]
    if len(A) == 0 or len(B) == 0:
        raise ValueError("Hausdorff distance needs nonempty sets")
    if chart is not None and chart.kind == "euclidean":
        chart = None
    return max(_one_sided(A, B, chart), _one_sided(B, A, chart))


# --------------------------------------------------------------------------
# box covers and transition graphs
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BoxCover:
    """Regular subdivision of ``[lo, hi]`` into ``2**depth`` cells per axis.

    ``periodic[k]`` marks axes whose bounds span one full period.  ``glue``
    holds the monodromy for a mapping-torus cover (last axis glued).
    """

    lo: np.ndarray
    hi: np.ndarray
    depth: tuple
    periodic: tuple
    active: Optional[np.ndarray] = None
    glue: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        n = len(lo)
        depth = self.depth
        if np.isscalar(depth):
            depth = (int(depth),) * n
        object.__setattr__(self, "depth", tuple(int(d) for d in depth))
        per = self.periodic if self.periodic is not None else (False,) * n
        object.__setattr__(self, "periodic", tuple(bool(p) for p in per))
        if np.any(hi <= lo) or len(self.depth) != n or len(self.periodic) != n:
            raise ValueError("invalid box cover")
        if self.active is not None:
            act = np.asarray(self.active, dtype=bool)
            if act.shape != (self.size,):
                raise ValueError("active mask has the wrong length")
            object.__setattr__(self, "active", act)

    @classmethod
    def for_system(cls, sys: SmoothSystem, lo, hi, depth) -> "BoxCover":
        chart = sys.chart
        n = chart.dim
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        periodic = [False] * n
        glue = None
        if chart.kind == "torus":
            for k, p in enumerate(chart.periods):
                if p is not None and abs(lo[k]) < 1e-12 and abs(hi[k] - p) < 1e-12:
                    periodic[k] = True
        elif chart.kind == "mapping_torus":
            periodic = [True] * (n - 1) + [False]
            lo = np.zeros(n)
            hi = np.ones(n)
            glue = np.asarray(chart.monodromy, dtype=float)
        return cls(lo, hi, depth, tuple(periodic), None, glue)

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def shape(self) -> tuple:
        return tuple(2 ** d for d in self.depth)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def widths(self) -> np.ndarray:
        return (self.hi - self.lo) / np.array(self.shape)

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.widths))

    @property
    def active_indices(self) -> np.ndarray:
        return np.arange(self.size) if self.active is None else np.nonzero(self.active)[0]

    def with_active(self, mask) -> "BoxCover":
        return BoxCover(self.lo, self.hi, self.depth, self.periodic, mask, self.glue)

    def centers(self, idx=None) -> np.ndarray:
        idx = self.active_indices if idx is None else np.asarray(idx, dtype=int)
        sub = np.array(np.unravel_index(idx, self.shape)).T
        return self.lo + (sub + 0.5) * self.widths

    def index_of(self, points) -> np.ndarray:
        """Flat box index of each point, or -1 outside the bounds."""
        P = np.atleast_2d(np.asarray(points, dtype=float))
        cell = np.floor((P - self.lo) / self.widths).astype(int)
        shape = np.array(self.shape)
        per = np.array(self.periodic)
        cell[:, per] = np.mod(cell[:, per], shape[per])
        ok = np.all((cell >= 0) & (cell < shape), axis=1)
        out = np.full(len(P), -1)
        out[ok] = np.ravel_multi_index(tuple(cell[ok].T), self.shape)
        return out

    def project(self, idx, coarse: "BoxCover") -> np.ndarray:
        """Indices of the boxes of a coarser cover containing the given boxes."""
        return coarse.index_of(self.centers(idx))

    def to_dict(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist(), "depth": list(self.depth),
                "periodic": list(self.periodic), "diameter": self.diameter,
                "active": self.active_indices.tolist()}


@dataclass(frozen=True)
class TransitionGraph:
    cover: BoxCover
    graph: Digraph
    nodes: np.ndarray            # node -> box index
    params: dict

    @property
    def n(self) -> int:
        return self.graph.n

    def node_of_box(self, boxes) -> np.ndarray:
        pos = np.full(self.cover.size, -1)
        pos[self.nodes] = np.arange(len(self.nodes))
        return pos[np.asarray(boxes, dtype=int)]

    def centers(self, nodes=None) -> np.ndarray:
        nodes = np.arange(self.n) if nodes is None else np.asarray(nodes, dtype=int)
        return self.cover.centers(self.nodes[nodes])

    def edges_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["src", "dst"])
            for a, b in self.graph.edges():
                w.writerow([int(self.nodes[a]), int(self.nodes[b])])

    def boxes_json(self) -> str:
        d = self.cover.to_dict()
        d["params"] = self.params
        d["escaping"] = sorted(int(self.nodes[v]) for v in self.graph.escaping)
        return json.dumps(d, indent=2, sort_keys=True)


def _sample_points(cover: BoxCover, boxes: np.ndarray, samples: int, rng) -> tuple[np.ndarray, np.ndarray]:
    n = cover.dim
    corners = np.array(list(product((0.0, 1.0), repeat=n)))
    rel = [corners, np.full((1, n), 0.5)]
    extra = max(0, samples - len(corners) - 1)
    base = np.array(np.unravel_index(boxes, cover.shape)).T.astype(float)
    pts = []
    owner = []
    for r in rel:
        for row in r:
            pts.append(cover.lo + (base + row) * cover.widths)
            owner.append(boxes)
    # one draw per extra sample so that raising ``samples`` keeps earlier points
    for _ in range(extra):
        pts.append(cover.lo + (base + rng.random((len(boxes), n))) * cover.widths)
        owner.append(boxes)
    return np.concatenate(pts), np.concatenate(owner)


def _edge_targets(cover: BoxCover, P: np.ndarray, delta: float, chunk: int = 200_000):
    """For each image point, the boxes within ``delta``: (point row, box index) pairs."""
    n = cover.dim
    w = cover.widths
    shape = np.array(cover.shape)
    per = np.array(cover.periodic)
    r = np.ceil(delta / w).astype(int)
    offs = np.array(list(product(*[range(-k, k + 1) for k in r])))
    rows_out, box_out = [], []
    step = max(1, chunk // len(offs))
    for k0 in range(0, len(P), step):
        p = P[k0:k0 + step]
        cell = np.floor((p - cover.lo) / w).astype(int)
        cand = cell[:, None, :] + offs[None, :, :]
        cand[..., per] = np.mod(cand[..., per], shape[per])
        ok = np.all((cand >= 0) & (cand < shape), axis=2)
        centers = cover.lo + (cand + 0.5) * w
        diff = p[:, None, :] - centers
        period = cover.hi - cover.lo
        diff[..., per] -= np.round(diff[..., per] / period[per]) * period[per]
        gap = np.maximum(np.abs(diff) - w / 2, 0.0)
        ok &= np.sqrt((gap ** 2).sum(-1)) < delta
        ii, jj = np.nonzero(ok)
        rows_out.append(ii + k0)
        box_out.append(np.ravel_multi_index(tuple(cand[ii, jj].T), cover.shape))
    return np.concatenate(rows_out), np.concatenate(box_out)


def build_transition_graph(sys: SmoothSystem, cover: BoxCover, t_step: float = 1.0,
                           delta_fat: Optional[float] = None, samples: Optional[int] = None,
                           seed: int = 0, ctrl: StepControl = StepControl(tol=1e-8)) -> TransitionGraph:
    """Edges ``b -> b'`` whenever some sample of ``b`` lands within ``delta_fat`` of ``b'``.

    Samples are the box corners, the center and seeded uniform points up to
    ``samples`` per box.  Images outside the bounds on a non-periodic axis
    flag their box as escaping; such boxes stay in the graph.
    """
    if t_step < 1:
        raise ValueError("t_step must be at least 1")
    diam = cover.diameter
    delta = diam if delta_fat is None else float(delta_fat)
    if delta < diam / 2:
        raise ValueError("delta_fat must be at least half a box diameter")
    n = cover.dim
    samples = (2 ** n + 1 + 4) if samples is None else int(samples)
    boxes = cover.active_indices
    rng = np.random.default_rng(seed)
    pts, owner = _sample_points(cover, boxes, samples, rng)
    img = flow_map(sys, pts, t_step, ctrl)
    per = np.array(cover.periodic)
    outside = np.any(((img < cover.lo) | (img > cover.hi)) & ~per, axis=1)
    reps = [(img, np.arange(len(img)))]
    if cover.glue is not None:
        A = cover.glue
        low = img[:, -1] < delta
        if np.any(low):
            c = img[low].copy()
            c[:, :-1] = np.mod(c[:, :-1] @ np.linalg.inv(A).T, 1.0)
            c[:, -1] += 1.0
            reps.append((c, np.nonzero(low)[0]))
        high = img[:, -1] > 1.0 - delta
        if np.any(high):
            c = img[high].copy()
            c[:, :-1] = np.mod(c[:, :-1] @ A.T, 1.0)
            c[:, -1] -= 1.0
            reps.append((c, np.nonzero(high)[0]))
        outside[:] = False
    src_all, dst_all = [], []
    for P, rows in reps:
        ii, bb = _edge_targets(cover, P, delta)
        src_all.append(owner[rows[ii]])
        dst_all.append(bb)
    src = np.concatenate(src_all)
    dst = np.concatenate(dst_all)
    node_of = np.full(cover.size, -1)
    node_of[boxes] = np.arange(len(boxes))
    keep = node_of[dst] >= 0
    pairs = np.unique(np.column_stack([node_of[src[keep]], node_of[dst[keep]]]), axis=0)
    succ = [[] for _ in boxes]
    for a, b in pairs:
        succ[a].append(int(b))
    esc = frozenset(int(v) for v in np.unique(node_of[owner[outside]]))
    graph = Digraph(tuple(tuple(s) for s in succ), esc)
    params = {"t_step": float(t_step), "delta_fat": float(delta), "samples_per_box": samples,
              "seed": int(seed), "tol": ctrl.tol}
    return TransitionGraph(cover, graph, boxes, params)


def attractors_json(records: list, g: Optional[TransitionGraph] = None) -> str:
    """JSON list of ``{boxes, neighborhood, dual}``; box indices when ``g`` is given."""
    out = []
    for r in records:
        d = r.to_dict()
        if g is not None:
            for k in ("boxes", "neighborhood", "dual"):
                d[k] = [int(g.nodes[v]) for v in d[k]]
        out.append(d)
    return json.dumps(out, indent=2, sort_keys=True)


# --------------------------------------------------------------------------
# periodic orbits near chain transitive regions
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PeriodicApproximation:
    orbit: Optional[object]          # Trajectory over one period, or None
    dH: Optional[float]
    period: Optional[float]
    diagnostics: dict


def approximate_by_periodic_orbit(sys: SmoothSystem, g: TransitionGraph, region, max_seeds: int = 8,
                                  t_max: float = 50.0) -> PeriodicApproximation:
    """Periodic orbit found by section shooting from recurrent boxes of ``region``.

    Reports the Hausdorff distance between the orbit samples and the region's
    box centers.  Failure to converge returns ``orbit=None``.
    """
    from .flow import integrate
    from .periodic import return_time, section_axis, shoot_periodic

    region = np.array(sorted(set(int(v) for v in region)), dtype=int)
    if not is_chain_transitive(g, region):
        raise ValueError("region is not chain transitive")
    sub, labels = g.graph.induced(region)
    rec = labels[chain_recurrent_set(sub)]
    pool = rec if len(rec) else region
    pick = pool[np.unique(np.linspace(0, len(pool) - 1, min(max_seeds, len(pool))).round().astype(int))]
    centers = g.centers(region)
    diag = {"seeds": int(len(pick)), "no_return": 0, "not_converged": 0}
    best = None
    for x in g.centers(pick):
        if np.linalg.norm(sys.f(x)) < 1e-9:
            diag["no_return"] += 1
            continue
        ax = section_axis(sys, x)
        T0 = return_time(sys, x, ax, t_max=t_max)
        if T0 is None:
            diag["no_return"] += 1
            continue
        res = shoot_periodic(sys, x, T0, ax)
        if not res.converged[0] or res.periods[0] <= 0:
            diag["not_converged"] += 1
            continue
        traj = integrate(sys, res.points[0], float(res.periods[0]))
        dh = hausdorff_distance(traj.points, centers, sys.chart)
        if best is None or dh < best[1]:
            best = (traj, dh, float(res.periods[0]))
    if best is None:
        return PeriodicApproximation(None, None, None, diag)
    return PeriodicApproximation(best[0], float(best[1]), best[2], diag)
