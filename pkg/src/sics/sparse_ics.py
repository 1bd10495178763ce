"""Sparse invariant coordinate selection.

Alternating minimization of

    sum_j |S1^{-1/2} r_j - A B' r_j|^2 + sum_m lam_m |beta_m|_1,   A'A = I,

where ``r_j`` are the columns of ``S2^{1/2}``.  For fixed ``A`` each column
of ``B`` is a Gram-form LASSO with ``G = S2`` and ``c = S2 S1^{-1/2} a_m``;
for fixed ``B`` the optimal ``A`` is the reduced-rank Procrustes rotation of
``S1^{-1/2} S2 B``, after which ``A`` is rotated to diagonalize the whitened
``S2`` so the columns keep the ICS ordering.
"""

from dataclasses import dataclass, field
import time
import warnings

from numba import njit
import numpy as np

from .errors import CountUnreachable, NoConvergenceWarning, RankDeficient
from .ics import SIGN_TOL, as_matrix, fix_signs, ics_solve, whitened_s2
from .lasso import _check_gram, _point, _solve
from .matdecomp import procrustes, sym_eig


@dataclass(frozen=True)
class SicsConfig:
    """Number of components and per-component sparsity.

    Give ``counts`` (nonzeros per column, the usual choice) or ``penalties``
    (LASSO penalty per column).  A scalar is broadcast to all ``k`` columns.
    """

    k: int = 1
    counts: tuple | None = None
    penalties: tuple | None = None
    tol: float = 1e-6
    max_outer_iter: int = 200

    def __post_init__(self):
        if (self.counts is None) == (self.penalties is None):
            raise ValueError("give exactly one of counts or penalties")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        for name in ("counts", "penalties"):
            val = getattr(self, name)
            if val is None:
                continue
            val = tuple(np.broadcast_to(np.asarray(val), (self.k,)).tolist())
            object.__setattr__(self, name, val)
        if self.penalties is not None and min(self.penalties) < 0:
            raise ValueError("penalties must be non-negative")
        if self.counts is not None:
            object.__setattr__(self, "counts", tuple(int(r) for r in self.counts))
            if min(self.counts) < 1:
                raise ValueError("counts must be at least 1")
        if not self.tol > 0 or self.max_outer_iter < 1:
            raise ValueError("tol must be positive and max_outer_iter >= 1")

    def check(self, p):
        if self.k > p:
            raise ValueError(f"k = {self.k} exceeds dimension {p}")
        if self.counts is not None and max(self.counts) > p:
            raise ValueError(f"sparsity counts must lie in 1..{p}")

    def to_dict(self):
        return {"k": self.k, "counts": self.counts, "penalties": self.penalties,
                "tol": self.tol, "max_outer_iter": self.max_outer_iter}


@dataclass
class SicsSolution:
    B: np.ndarray
    A: np.ndarray
    outer_iterations: int
    converged: bool
    final_delta: float
    objective_trace: list = field(default_factory=list)
    lambdas: np.ndarray | None = None
    count_reached: bool = True
    init_eigenvalues: np.ndarray | None = None

    def to_dict(self):
        return {
            "B": self.B.tolist(),
            "A": self.A.tolist(),
            "nonzeros": [int(v) for v in np.count_nonzero(self.B, axis=0)],
            "lambdas": None if self.lambdas is None else self.lambdas.tolist(),
            "outer_iterations": self.outer_iterations,
            "converged": bool(self.converged),
            "final_delta": float(self.final_delta),
            "objective_trace": [float(v) for v in self.objective_trace],
            "count_reached": bool(self.count_reached),
            "ics_eigenvalues": (None if self.init_eigenvalues is None
                                else self.init_eigenvalues.tolist()),
        }


def sics_objective(B, A, S1, S2, penalties=0.0):
    """Penalized objective through its fixed-``A`` decomposition.

    ``tr((I - AA') W S2 W) + |S2^{1/2}(WA - B)|_F^2 + sum_m lam_m |beta_m|_1``
    with ``W = S1^{-1/2}``.
    """
    B = np.atleast_2d(np.asarray(B, dtype=float).T).T
    A = np.atleast_2d(np.asarray(A, dtype=float).T).T
    S2m = as_matrix(S2)
    W, M = whitened_s2(S1, S2m)
    return _objective(B, A, W, M, S2m, penalties)


def _objective(B, A, W, M, S2m, penalties):
    lam = np.broadcast_to(np.asarray(penalties, dtype=float), (B.shape[1],))
    R = W @ A - B
    fit = np.trace(M) - np.trace(A.T @ M @ A)
    return float(fit + np.sum(R * (S2m @ R)) + lam @ np.abs(B).sum(axis=0))


class _Timer:
    def __init__(self, sink):
        self.sink = sink

    def __call__(self, phase, start):
        if self.sink is not None:
            self.sink[phase] = self.sink.get(phase, 0.0) + time.perf_counter() - start


def _lasso_column(S2m, c, cfg, m):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", CountUnreachable)
        if cfg.counts is not None:
            sol = _solve(S2m, c, count=cfg.counts[m])
        else:
            sol = _solve(S2m, c, lam=cfg.penalties[m])
    return sol, any(issubclass(w.category, CountUnreachable) for w in caught)


@njit(cache=True)
def _fix_signs_1d(b):
    for j in range(b.size):
        if abs(b[j]) > SIGN_TOL:
            if b[j] < 0:
                return -b
            break
    return b


@njit(cache=True)
def _sics_single(S2m, WS2, W, M, a, b, count, lam, tol, max_iter):
    """Algorithm loop for one component; the rotation step is vacuous."""
    trM = np.trace(M)
    trace = np.empty(max_iter)
    best_obj = np.inf
    best_a, best_b = a.copy(), b.copy()
    delta = np.inf
    lam_eff = 0.0
    reached = True
    converged = False
    collapsed = False
    it = 0
    for it in range(1, max_iter + 1):
        c = WS2.T @ a
        beta, lam_eff, status = _point(S2m, c, count, lam)
        if status != 0:
            reached = False
        beta = _fix_signs_1d(beta)
        delta = np.sqrt(np.sum((beta - b) ** 2))
        b = beta
        v = WS2 @ b
        nv = np.sqrt(np.sum(v ** 2))
        if nv == 0.0:
            collapsed = True
            break
        a = v / nv
        R = W @ a - b
        obj = trM - a @ (M @ a) + R @ (S2m @ R) + lam_eff * np.abs(b).sum()
        trace[it - 1] = obj
        if obj < best_obj:
            best_obj, best_a, best_b = obj, a, b
        if delta < tol:
            converged = True
            break
    n = it if not collapsed else it - 1
    return (b, a, best_b, best_a, it, converged, delta, trace[:n].copy(), lam_eff,
            reached, collapsed)


def sics_fit(S1, S2, cfg, timings=None):
    """Fit sparse ICS.

    Parameters
    ----------
    S1, S2 : ScatterEstimate or (p, p) array
    cfg : SicsConfig
    timings : dict, optional
        If given, wall-clock seconds are accumulated under ``ics_init``,
        ``lasso`` and ``decompositions``.

    Returns
    -------
    SicsSolution
        ``converged`` is False (with a ``NoConvergenceWarning``) if
        ``cfg.max_outer_iter`` was reached; the iterate with the smallest
        objective is returned in that case.
    """
    S1m, S2m = as_matrix(S1), as_matrix(S2)
    p = S1m.shape[0]
    cfg.check(p)
    _check_gram(S2m)
    k = cfg.k
    clock = _Timer(timings)

    t0 = time.perf_counter()
    W, M = whitened_s2(S1m, S2m)
    init = ics_solve(S1m, S2m, k)
    A = init.A
    B = fix_signs(W @ A)
    clock("ics_init", t0)

    WS2 = W @ S2m
    loop = _loop_single if k == 1 else _loop_general
    B, A, it, converged, delta, trace, lambdas, reached = loop(
        S2m, WS2, W, M, A, B, cfg, clock)
    if not reached:
        warnings.warn("LASSO path skipped a requested count in some iteration",
                      CountUnreachable, stacklevel=2)
    if not converged:
        warnings.warn(f"sparse ICS did not converge in {cfg.max_outer_iter} iterations "
                      f"(last change {delta:.3g})", NoConvergenceWarning, stacklevel=2)
    return SicsSolution(B, A, it, converged, delta, trace, lambdas, reached,
                        init.eigenvalues)


def _loop_single(S2m, WS2, W, M, A, B, cfg, clock):
    count = -1 if cfg.counts is None else cfg.counts[0]
    lam = -1.0 if cfg.penalties is None else float(cfg.penalties[0])
    t0 = time.perf_counter()
    c = np.ascontiguousarray
    (b, a, best_b, best_a, it, converged, delta, trace, lam_eff, reached,
     collapsed) = _sics_single(c(S2m), c(WS2), c(W), c(M), c(A[:, 0]), c(B[:, 0]),
                               count, lam, float(cfg.tol), int(cfg.max_outer_iter))
    clock("lasso", t0)
    if collapsed:
        raise RankDeficient("target matrix has collapsed columns")
    if not converged:
        b, a = best_b, best_a
    return (b[:, None].copy(), a[:, None].copy(), int(it), bool(converged), float(delta),
            [float(v) for v in trace], np.array([lam_eff]), bool(reached))


def _loop_general(S2m, WS2, W, M, A, B, cfg, clock):
    p, k = B.shape
    trace = []
    lambdas = np.zeros(k)
    reached = True
    best = None
    delta = np.inf
    converged = False
    it = 0
    for it in range(1, cfg.max_outer_iter + 1):
        B_prev = B
        t0 = time.perf_counter()
        B = np.empty((p, k))
        C = WS2.T @ A          # columns are S2 W a_m
        for m in range(k):
            sol, skipped = _lasso_column(S2m, C[:, m], cfg, m)
            B[:, m] = sol.beta
            lambdas[m] = sol.lambda_effective
            reached = reached and not skipped
        B = fix_signs(B)
        clock("lasso", t0)
        delta = float(np.linalg.norm(B - B_prev))

        t0 = time.perf_counter()
        A = procrustes(WS2 @ B)
        if k > 1:
            rot = sym_eig(A.T @ M @ A).eigenvectors
            A = A @ rot
        clock("decompositions", t0)

        obj = _objective(B, A, W, M, S2m, lambdas)
        trace.append(obj)
        if best is None or obj < best[0]:
            best = (obj, B, A)
        if delta < cfg.tol:
            converged = True
            break
    if not converged:
        _, B, A = best
    return B, A, it, converged, delta, trace, lambdas.copy(), reached
