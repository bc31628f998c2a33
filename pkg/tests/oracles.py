"""Independent brute-force reference implementations used by the tests."""

from __future__ import annotations


import numpy as np


# ---- lattice paths ----------------------------------------------------------

MOVES = {"D": (1, 1), "O": (1, 0), "P": (0, 1)}


def all_paths(rows: int, cols: int):
    """Every monotone move string from (0, 0) that stops on first reaching the last column."""
    last = cols - 1
    out = []

    def walk(a, b, moves):
        if b == last:
            out.append("".join(moves))
            return
        for m in "DOP":
            da, db = MOVES[m]
            if a + da < rows:
                moves.append(m)
                walk(a + da, b + db, moves)
                moves.pop()

    walk(0, 0, [])
    return out


def path_nodes(moves: str):
    a = b = 0
    nodes = [(0, 0)]
    for m in moves:
        da, db = MOVES[m]
        a, b = a + da, b + db
        nodes.append((a, b))
    return nodes


def brute_bottleneck(cost):
    """Optimal bottleneck cost and lexicographically smallest optimal path, by enumeration."""
    cost = np.asarray(cost, dtype=float)
    best = None
    for moves in all_paths(*cost.shape):
        c = max(cost[a, b] for a, b in path_nodes(moves))
        if best is None or c < best[0] or (c == best[0] and moves < best[1]):
            best = (c, moves)
    return best


def _reachable(ok: np.ndarray, start):
    rows, cols = ok.shape
    seen = np.zeros_like(ok)
    if not ok[start]:
        return seen
    stack = [start]
    seen[start] = True
    while stack:
        a, b = stack.pop()
        if b == cols - 1:
            continue
        for da, db in MOVES.values():
            x, y = a + da, b + db
            if x < rows and ok[x, y] and not seen[x, y]:
                seen[x, y] = True
                stack.append((x, y))
    return seen


def threshold_bottleneck(cost):
    """Bottleneck optimum by bisection over the distinct costs with plain reachability."""
    cost = np.asarray(cost, dtype=float)
    vals = np.unique(cost[np.isfinite(cost)])
    ok = lambda thr: _reachable(cost <= thr, (0, 0))[:, -1].any()
    if len(vals) == 0 or not ok(vals[-1]):
        return float("inf")
    lo, hi = 0, len(vals) - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if ok(vals[mid]):
            hi = mid
        else:
            lo = mid + 1
    return float(vals[lo])


def greedy_lex_path(cost, opt: float) -> str:
    """Lexicographically smallest path under the threshold ``opt``, one reachability test per step."""
    cost = np.asarray(cost, dtype=float)
    ok = cost <= opt
    rows, cols = cost.shape
    a = b = 0
    moves = []
    while b < cols - 1:
        for m in "DOP":
            da, db = MOVES[m]
            x, y = a + da, b + db
            if x < rows and ok[x, y] and _reachable(ok, (x, y))[:, -1].any():
                a, b = x, y
                moves.append(m)
                break
        else:
            raise AssertionError("threshold admits no path")
    return "".join(moves)


# ---- digraphs ---------------------------------------------------------------


def adjacency(n, edges) -> np.ndarray:
    M = np.zeros((n, n), dtype=bool)
    for a, b in edges:
        M[a, b] = True
    return M


def closure(M: np.ndarray) -> np.ndarray:
    """Walks of length >= 1 (Floyd-Warshall on booleans)."""
    R = M.copy()
    for k in range(len(M)):
        R |= R[:, k:k + 1] & R[k:k + 1, :]
    return R


def closed_walk_nodes(M) -> set:
    return set(np.nonzero(np.diag(closure(M)))[0].tolist())


def _restrict(M, S):
    keep = np.zeros(len(M), dtype=bool)
    keep[list(S)] = True
    return M & keep[:, None] & keep[None, :]


def invariant_nodes(M, S) -> set:
    """Nodes of S on a bi-infinite walk inside S: they reach and are reached from a cycle in S."""
    sub = _restrict(M, S)
    R = closure(sub)
    cyc = np.diag(R)
    out = set()
    for v in S:
        fwd = cyc[v] or bool((R[v] & cyc).any())
        bwd = cyc[v] or bool((R[:, v] & cyc).any())
        if fwd and bwd:
            out.add(v)
    return out


def viable_nodes(M) -> set:
    R = closure(M)
    cyc = np.diag(R)
    return {v for v in range(len(M)) if cyc[v] or (R[v] & cyc).any()}


def _masks(n, edges):
    succ = [0] * n
    for a, b in edges:
        succ[a] |= 1 << b
    return succ


def _image(succ, S: int) -> int:
    out = 0
    v = 0
    while S:
        if S & 1:
            out |= succ[v]
        S >>= 1
        v += 1
    return out


def _bits(S: int) -> set:
    return {v for v in range(S.bit_length()) if S >> v & 1}


def omega(succ, U: int, n: int) -> int:
    """Nodes reached at some exact step count in [n, 3n): the late-time image of U."""
    cur = U
    out = 0
    for L in range(1, 3 * n):
        cur = _image(succ, cur)
        if L >= n:
            out |= cur
    return out


def _invariant(succ, S: int, n: int) -> int:
    """Largest subset of S in which every node has a successor and a predecessor."""
    while True:
        keep = 0
        for v in range(n):
            if S >> v & 1 and succ[v] & S:
                keep |= 1 << v
        keep &= _image(succ, keep)
        if keep == S:
            return S
        S = keep


def conley_oracle(n, edges, escaping=()):
    """Chain recurrent set and the intersection of A ∪ A* over every attractor, by subset enumeration.

    Works on bitmasks, so it is only meant for small graphs.
    """
    succ = _masks(n, edges)
    full = (1 << n) - 1
    # viable: nodes with an infinite forward walk, by peeling sinks
    via = full
    while True:
        nxt = sum(1 << v for v in range(n) if via >> v & 1 and succ[v] & via)
        if nxt == via:
            break
        via = nxt
    vsucc = [m & via if via >> v & 1 else 0 for v, m in enumerate(succ)]
    esc = sum(1 << e for e in escaping)
    atts = set()
    U = via
    while U:
        if _image(vsucc, U) & ~U == 0:
            A = omega(vsucc, U, n)
            if A and not A & esc:
                atts.add(A)
        U = (U - 1) & via
    inter = via
    for A in atts:
        inter &= A | _invariant(vsucc, via & ~A, n)
    return closed_walk_nodes(adjacency(n, edges)), _bits(inter), {frozenset(_bits(A)) for A in atts}


def strongly_connected(M, S) -> bool:
    S = list(S)
    if len(S) == 1:
        return True
    R = closure(_restrict(M, S))
    return all(R[a, b] for a in S for b in S if a != b)
