"""Linear non-Gaussian acyclic causal discovery from a (sparse) unmixing matrix.

``x = B x + e`` with ``B`` strictly lower triangular after a permutation of
the variables, so ``W = I - B`` is an unmixing matrix.  Given an estimate of
``W`` with rows in arbitrary order and scale, the rows are permuted to put
large entries on the diagonal, rescaled to a unit diagonal, and the variables
are ordered to make ``B`` as close to lower triangular as possible before
pruning.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import heapq
import itertools
import logging
import warnings

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import (CountUnreachable, NoConvergenceWarning, SicsError,
                     TooManyFailures, ZeroDiagonal)
from .scatter import compute_pair
from .sparse_ics import SicsConfig, sics_fit

log = logging.getLogger(__name__)

EXHAUSTIVE_MAX_P = 8
DIAG_TOL = 1e-10
DEFAULT_PRUNE_TOL = 0.05
DEFAULT_EDGE_THRESHOLD = 0.4


@dataclass
class CausalGraph:
    """Weighted DAG.  ``B_hat[i, j]`` is the effect of variable ``j`` on ``i``.

    ``ordering`` lists variables from causes to effects; every edge goes
    from an earlier to a later variable in it.  ``edges`` holds
    ``(from, to, weight, frequency)`` with 0-based indices.
    """

    p: int
    ordering: list
    B_hat: np.ndarray
    edges: list
    names: list = field(default_factory=list)
    n_replicates: int = 1
    n_failed: int = 0

    def edge_set(self):
        return {(i, j) for i, j, _, _ in self.edges}

    def label(self, k):
        return self.names[k] if self.names else f"x{k + 1}"

    def to_dict(self):
        return {
            "nodes": [self.label(k) for k in range(self.p)],
            "ordering": [self.label(k) for k in self.ordering],
            "edges": [{"from": self.label(i), "to": self.label(j), "weight": float(w),
                       "frequency": float(f)} for i, j, w, f in self.edges],
            "B_hat": self.B_hat.tolist(),
            "n_replicates": int(self.n_replicates),
            "n_failed": int(self.n_failed),
        }

    def to_dot(self):
        lines = ["digraph causal {"]
        lines += [f'  "{self.label(k)}";' for k in self.ordering]
        for i, j, w, f in self.edges:
            lines.append(f'  "{self.label(i)}" -> "{self.label(j)}" '
                         f'[label="{w:.3g} ({f:.2f})", weight={f:.4f}];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def row_assignment(W):
    """Row order ``perm`` minimizing ``sum_i 1 / |W[perm[i], i]|``.

    Rows are first scaled to unit max-abs so the choice does not depend on
    the arbitrary row scales of an unmixing matrix.
    """
    W = np.asarray(W, dtype=float)
    scale = np.abs(W).max(axis=1, keepdims=True)
    if np.any(scale == 0):
        raise ZeroDiagonal("unmixing matrix has a zero row")
    A = np.abs(W) / scale
    with np.errstate(divide="ignore"):
        cost = np.where(A > 0, 1.0 / A, np.inf)
    finite = np.isfinite(cost)
    big = (cost[finite].max() if finite.any() else 1.0) * W.shape[0] * 1e6
    cost = np.where(finite, cost, big)
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(W.shape[0], dtype=int)
    perm[cols] = rows
    if np.any(A[perm, np.arange(W.shape[0])] < DIAG_TOL):
        raise ZeroDiagonal("no row permutation gives a nonzero diagonal")
    return perm


def upper_cost(S, order):
    """Sum of ``S[order[a], order[b]]`` over ``a < b``."""
    order = np.asarray(order)
    M = S[np.ix_(order, order)]
    return float(np.triu(M, 1).sum())


def causal_order(B):
    """Ordering minimizing the squared mass of ``B`` above the diagonal.

    Exhaustive for ``p <= 8``.  Otherwise the next variable is the one with
    the least incoming mass from those not yet placed (exact when ``B`` is a
    DAG), followed by adjacent swaps while they lower the cost.
    """
    S = np.asarray(B, dtype=float) ** 2
    p = S.shape[0]
    if p <= EXHAUSTIVE_MAX_P:
        perms = np.array(list(itertools.permutations(range(p))), dtype=np.intp)
        cost = np.zeros(len(perms))
        for a in range(p):
            for b in range(a + 1, p):
                cost += S[perms[:, a], perms[:, b]]
        return [int(v) for v in perms[int(np.argmin(cost))]]
    left = list(range(p))
    order = []
    while left:
        incoming = S[np.ix_(left, left)].sum(axis=1)
        order.append(left.pop(int(np.argmin(incoming))))
    improved = True
    while improved:
        improved = False
        for a in range(p - 1):
            u, v = order[a], order[a + 1]
            # u before v counts S[u, v] above the diagonal; swapped, S[v, u]
            if S[v, u] < S[u, v]:
                order[a], order[a + 1] = v, u
                improved = True
    return [int(v) for v in order]


def lingam_from_unmixing(W, prune_tol=DEFAULT_PRUNE_TOL, names=None):
    """Single causal graph from an unmixing matrix (rows = components).

    Raises
    ------
    ZeroDiagonal
        If no row permutation gives a diagonal bounded away from zero.
    """
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ValueError("unmixing matrix must be square")
    p = W.shape[0]
    perm = row_assignment(W)
    Wp = W[perm]
    Wt = Wp / np.diag(Wp)[:, None]
    B = np.eye(p) - Wt
    np.fill_diagonal(B, 0.0)
    order = causal_order(B)
    pos = np.empty(p, dtype=int)
    pos[order] = np.arange(p)
    # keep j -> i only if j precedes i, and only if it is not negligible
    keep = (pos[None, :] < pos[:, None]) & (np.abs(B) >= prune_tol)
    B = np.where(keep, B, 0.0)
    edges = [(int(j), int(i), float(B[i, j]), 1.0)
             for a, i in enumerate(order) for j in order[:a] if B[i, j] != 0.0]
    return CausalGraph(p, order, B, edges, list(names) if names else [])


def _creates_cycle(adj, i, j):
    """Would adding ``i -> j`` close a cycle, i.e. is ``i`` reachable from ``j``?"""
    stack, seen = [j], {j}
    while stack:
        u = stack.pop()
        if u == i:
            return True
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return False


def _topological(p, adj):
    indeg = [0] * p
    for u in range(p):
        for v in adj[u]:
            indeg[v] += 1
    heap = [u for u in range(p) if indeg[u] == 0]
    heapq.heapify(heap)
    out = []
    while heap:
        u = heapq.heappop(heap)
        out.append(u)
        for v in sorted(adj[u]):
            indeg[v] -= 1
            if indeg[v] == 0:
                heapq.heappush(heap, v)
    return out


def aggregate(graphs, p, edge_threshold=DEFAULT_EDGE_THRESHOLD, names=None, n_failed=0):
    """Combine replicate graphs: edges kept at frequency >= ``edge_threshold``.

    Edges are added by decreasing frequency; an edge that would close a
    cycle with those already kept is dropped.
    """
    if not graphs:
        raise TooManyFailures("no successful replicates to aggregate")
    weights = {}
    for g in graphs:
        for i, j, w, _ in g.edges:
            weights.setdefault((i, j), []).append(w)
    m = len(graphs)
    cand = sorted(((len(ws) / m, i, j) for (i, j), ws in weights.items()),
                  key=lambda t: (-t[0], t[1], t[2]))
    adj = [set() for _ in range(p)]
    kept = []
    for f, i, j in cand:
        if f < edge_threshold:
            break
        if _creates_cycle(adj, i, j):
            log.info("edge %d -> %d (frequency %.2f) dropped: cycle", i, j, f)
            continue
        adj[i].add(j)
        kept.append((i, j, float(np.median(weights[(i, j)])), f))
    order = _topological(p, adj)
    B = np.zeros((p, p))
    for i, j, w, _ in kept:
        B[j, i] = w
    pos = {v: k for k, v in enumerate(order)}
    kept.sort(key=lambda e: (pos[e[0]], pos[e[1]]))
    return CausalGraph(p, order, B, kept, list(names) if names else [], m, n_failed)


def _replicate(X, pair, cfg, prune_tol, seed, b):
    rng = np.random.default_rng([seed, b])
    n = X.shape[0]
    counts = np.bincount(rng.integers(0, n, n), minlength=n)
    used = np.flatnonzero(counts)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CountUnreachable)
        warnings.simplefilter("ignore", NoConvergenceWarning)
        try:
            S1, S2 = compute_pair(X[used], pair, counts=counts[used])
            sol = sics_fit(S1, S2, cfg)
            return lingam_from_unmixing(sol.B.T, prune_tol)
        except (SicsError, np.linalg.LinAlgError) as exc:
            log.warning("bootstrap replicate %d failed: %s: %s", b, type(exc).__name__, exc)
            return None


def bootstrap_causal(X, pair="robust", sics_cfg=None, n_boot=1000,
                     edge_threshold=DEFAULT_EDGE_THRESHOLD, seed=0,
                     prune_tol=DEFAULT_PRUNE_TOL, threads=1, names=None):
    """Bootstrap-aggregated causal graph.

    Parameters
    ----------
    X : (n, p) array
        Requires ``n >= 2p``.
    pair : str or explicit scatter pair
    sics_cfg : SicsConfig, optional
        Must have ``k = p``; defaults to ``k = p`` with ``r = p`` (no sparsity).
    n_boot : int
    edge_threshold : float
    seed : int
        Replicate ``b`` resamples with ``default_rng([seed, b])``.
    threads : int
        Worker threads; the result does not depend on it.

    Raises
    ------
    TooManyFailures
        If more than half of the replicates fail.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("data must be an n x p matrix")
    n, p = X.shape
    if n < 2 * p:
        raise ValueError(f"causal discovery needs n >= 2p (n={n}, p={p})")
    if n_boot < 1:
        raise ValueError("n_boot must be positive")
    if not 0 <= edge_threshold <= 1:
        raise ValueError("edge_threshold must lie in [0, 1]")
    cfg = sics_cfg or SicsConfig(k=p, counts=p)
    if cfg.k != p:
        raise ValueError(f"causal discovery needs all p = {p} components")

    def job(b):
        return _replicate(X, pair, cfg, prune_tol, seed, b)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            graphs = list(pool.map(job, range(n_boot)))
    else:
        graphs = [job(b) for b in range(n_boot)]
    ok = [g for g in graphs if g is not None]
    failed = n_boot - len(ok)
    if failed > 0.5 * n_boot:
        raise TooManyFailures(f"{failed} of {n_boot} bootstrap replicates failed")
    return aggregate(ok, p, edge_threshold, names, failed)
