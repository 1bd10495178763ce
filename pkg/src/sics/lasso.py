"""Penalized least squares in Gram form.

Minimizes ``f(b) = b'Gb - 2b'c + lam * |b|_1`` (plus the constant ``yty``),
the column sub-problem of sparse ICS with ``G = S2`` and
``c = S2 S1^{-1/2} alpha``.  Note the objective is *not* halved, so the
all-zero threshold is ``lam_max = 2 |c|_inf``.

The solver follows the exact piecewise-linear homotopy (LARS with the lasso
drop rule) from ``lam_max`` down to zero.  This gives both a penalty-level
mode and a nonzero-count mode from the same path, and every returned point is
re-solved on its active set so the KKT conditions hold to rounding error.
"""

from dataclasses import dataclass
import warnings

from numba import njit
import numpy as np

from .errors import CountUnreachable, NotSPD

KKT_TOL = 1e-8


@dataclass(frozen=True)
class PenalizedLsProblem:
    gram: np.ndarray
    xty: np.ndarray
    yty: float = 0.0
    lam: float | None = None
    count: int | None = None

    def __post_init__(self):
        G = np.asarray(self.gram, dtype=float)
        c = np.asarray(self.xty, dtype=float).ravel()
        if G.ndim != 2 or G.shape != (c.size, c.size):
            raise ValueError("gram must be p x p and xty length p")
        if (self.lam is None) == (self.count is None):
            raise ValueError("give exactly one of lam (penalty mode) or count (count mode)")
        if self.lam is not None and not self.lam >= 0:
            raise ValueError("lam must be non-negative")
        if self.count is not None and not 1 <= self.count <= c.size:
            raise ValueError("count must lie in 1..p")
        object.__setattr__(self, "gram", G)
        object.__setattr__(self, "xty", c)


@dataclass(frozen=True)
class PenalizedLsSolution:
    beta: np.ndarray
    lambda_effective: float
    active_count: int
    objective: float
    kkt_residual: float
    count_reached: bool = True


@dataclass(frozen=True)
class _Knot:
    gamma: float           # half penalty, lam / 2
    beta: np.ndarray
    active: tuple          # active set on the segment *below* this knot
    dropped: bool = False  # knot reached because a variable left


def objective(G, c, beta, lam, yty=0.0):
    return float(beta @ G @ beta - 2.0 * beta @ c + yty + lam * np.abs(beta).sum())


def kkt_residual(G, c, beta, lam):
    """Largest violation of the subgradient optimality conditions."""
    g = 2.0 * (G @ beta - c)
    act = beta != 0
    r_act = np.abs(g[act] + lam * np.sign(beta[act]))
    r_in = np.maximum(np.abs(g[~act]) - lam, 0.0)
    return float(max(r_act.max(initial=0.0), r_in.max(initial=0.0)))


def _check_gram(G):
    if not np.allclose(G, G.T, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(G).max())):
        raise NotSPD("gram matrix is not symmetric")
    try:
        np.linalg.cholesky(G)
    except np.linalg.LinAlgError:
        raise NotSPD("gram matrix is not positive definite") from None


@njit(cache=True)
def _sub(G, idx):
    k = idx.size
    out = np.empty((k, k))
    for u in range(k):
        for v in range(k):
            out[u, v] = G[idx[u], idx[v]]
    return out


@njit(cache=True)
def _join(G, act, m, signs, tied, nt):
    """Pick which of several simultaneously eligible variables enter.

    A subset ``S`` of ``tied[:nt]`` is consistent if every member moves away
    from zero in the direction of its sign and every left-out candidate's
    correlation shrinks at least as fast as the penalty.  Larger subsets are
    tried first.  ``act`` is extended in place; the new size is returned and
    left-out candidates get sign 0.
    """
    if nt == 1 or nt > 12:
        act[m:m + nt] = tied[:nt]
        return m + nt
    for size in range(nt, 0, -1):
        for mask in range(1, 1 << nt):
            bits = 0
            x = mask
            while x:
                bits += x & 1
                x >>= 1
            if bits != size:
                continue
            k = m + size
            idx = np.empty(k, np.int64)
            idx[:m] = act[:m]
            pos = m
            for i in range(nt):
                if (mask >> i) & 1:
                    idx[pos] = tied[i]
                    pos += 1
            rhs = np.empty(k)
            for u in range(k):
                rhs[u] = signs[idx[u]]
            d = np.linalg.solve(_sub(G, idx), rhs)
            dmax = np.abs(d).max()
            ok = True
            for u in range(m, k):
                if d[u] * signs[idx[u]] <= -1e-10 * dmax:
                    ok = False
            for i in range(nt):
                if ok and not (mask >> i) & 1:
                    j = tied[i]
                    aj = 0.0
                    for u in range(k):
                        aj += G[j, idx[u]] * d[u]
                    if signs[j] * aj < 1.0 - 1e-10:
                        ok = False
            if ok:
                act[:k] = idx
                for i in range(nt):
                    if not (mask >> i) & 1:
                        signs[tied[i]] = 0.0
                return k
    act[m:m + nt] = tied[:nt]
    return m + nt


@njit(cache=True)
def _border(Ginv, G, act, m, j):
    """Inverse of ``G[A+j, A+j]`` from the inverse of ``G[A, A]``."""
    out = np.empty((m + 1, m + 1))
    if m == 0:
        out[0, 0] = 1.0 / G[j, j]
        return out
    g = np.empty(m)
    for u in range(m):
        g[u] = G[act[u], j]
    w = Ginv @ g
    s = G[j, j] - g @ w
    for u in range(m):
        for v in range(m):
            out[u, v] = Ginv[u, v] + w[u] * w[v] / s
        out[u, m] = -w[u] / s
        out[m, u] = -w[u] / s
    out[m, m] = 1.0 / s
    return out


@njit(cache=True)
def _unborder(Ginv, i):
    """Inverse after deleting position ``i`` of the active set."""
    m = Ginv.shape[0]
    out = np.empty((m - 1, m - 1))
    piv = Ginv[i, i]
    uu = 0
    for u in range(m):
        if u == i:
            continue
        vv = 0
        for v in range(m):
            if v == i:
                continue
            out[uu, vv] = Ginv[u, v] - Ginv[u, i] * Ginv[i, v] / piv
            vv += 1
        uu += 1
    return out


@njit(cache=True)
def _path_arrays(G, c, stop_count, max_steps):
    p = c.size
    K = max_steps + 1
    gammas = np.zeros(K)
    betas = np.zeros((K, p))
    counts = np.zeros(K, np.int64)
    acts = np.full((K, p), -1, np.int64)
    drops = np.zeros(K, np.bool_)
    gamma = np.abs(c).max()
    if gamma == 0.0:
        return gammas[:1], betas[:1], counts[:1], acts[:1], drops[:1]
    scale = gamma
    eps = 1e-12 * scale
    signs = np.zeros(p)
    corr = c.copy()
    act = np.empty(p, np.int64)
    tied = np.empty(p, np.int64)
    nt = 0
    for j in range(p):
        if abs(corr[j]) >= gamma - eps:
            tied[nt] = j
            signs[j] = np.sign(corr[j])
            nt += 1
    m = _join(G, act, 0, signs, tied, nt)
    Ginv = np.linalg.inv(_sub(G, act[:m]))
    gammas[0] = gamma
    counts[0] = m
    acts[0, :m] = act[:m]
    nk = 1
    beta = np.zeros(p)
    inactive = np.ones(p, np.bool_)
    just_dropped = -1
    for _ in range(max_steps):
        if stop_count >= 0 and m > stop_count:
            break
        sa = np.empty(m)
        for u in range(m):
            sa[u] = signs[act[u]]
        d = Ginv @ sa
        # moving gamma down by t: beta_A += t d, corr -= t a
        a = np.zeros(p)
        for u in range(m):
            for j in range(p):
                a[j] += G[j, act[u]] * d[u]
        inactive[:] = True
        for u in range(m):
            inactive[act[u]] = False
        best_t = gamma
        event = 0
        who = -1
        for side in range(2):
            for j in range(p):
                if not inactive[j]:
                    continue
                if side == 0:
                    num = gamma - corr[j]
                    den = 1.0 - a[j]
                else:
                    num = gamma + corr[j]
                    den = 1.0 + a[j]
                # a variable that just left sits on the boundary; it may come
                # back later on the opposite side but not immediately
                if den <= 1e-15 or (j == just_dropped and num <= 1e-9 * scale):
                    continue
                t = num / den
                if eps < t < best_t:
                    best_t, event, who = t, 1, j
        for u in range(m):
            if d[u] != 0.0:
                t = -beta[act[u]] / d[u]
                if eps < t < best_t:
                    best_t, event, who = t, 2, u
        gamma = gamma - best_t if event != 0 else 0.0
        just_dropped = -1
        if event == 2:
            Ginv = _unborder(Ginv, who)
            just_dropped = act[who]
            for u in range(who, m - 1):
                act[u] = act[u + 1]
            m -= 1
            signs[just_dropped] = 0.0
        rhs = np.empty(m)
        for u in range(m):
            rhs[u] = c[act[u]] - gamma * signs[act[u]]
        bA = Ginv @ rhs
        beta = np.zeros(p)
        for u in range(m):
            beta[act[u]] = bA[u]
        corr = c - G @ beta
        if event == 1:
            # variables tied with the entering one join at the same knot
            inactive[:] = True
            for u in range(m):
                inactive[act[u]] = False
            nt = 0
            for j in range(p):
                if inactive[j] and (j == who or abs(corr[j]) >= gamma - 1e-10 * scale):
                    tied[nt] = j
                    signs[j] = np.sign(corr[j])
                    nt += 1
            m_old = m
            m = _join(G, act, m, signs, tied, nt)
            if m == m_old + 1:
                Ginv = _border(Ginv, G, act, m_old, act[m_old])
            else:
                Ginv = np.linalg.inv(_sub(G, act[:m]))
        gammas[nk] = gamma
        betas[nk] = beta
        counts[nk] = m
        acts[nk, :m] = act[:m]
        drops[nk] = event == 2
        nk += 1
        if event == 0:
            break
    return gammas[:nk], betas[:nk], counts[:nk], acts[:nk], drops[:nk]


def lasso_path(G, c, stop_count=None, max_steps=None):
    """Knots of the homotopy from ``gamma = |c|_inf`` down to 0.

    ``gamma`` is half the penalty.  Stops early once the active set exceeds
    ``stop_count`` variables.  The active-set inverse is carried along by
    bordering updates, so each step costs O(p * |A|).
    """
    G = np.ascontiguousarray(G, dtype=float)
    c = np.ascontiguousarray(np.ravel(c), dtype=float)
    max_steps = max_steps or 8 * c.size + 8
    stop = -1 if stop_count is None else int(stop_count)
    gam, bet, cnt, act, drp = _path_arrays(G, c, stop, max_steps)
    return [_Knot(float(gam[i]), bet[i], tuple(int(j) for j in act[i, :cnt[i]]), bool(drp[i]))
            for i in range(gam.size)]


@njit(cache=True)
def _polish(G, c, beta, gamma):
    """Re-solve the stationarity equations on the support of ``beta``."""
    idx = np.flatnonzero(beta)
    out = np.zeros(c.size)
    if idx.size:
        rhs = np.empty(idx.size)
        for u in range(idx.size):
            rhs[u] = c[idx[u]] - gamma * np.sign(beta[idx[u]])
        sol = np.linalg.solve(_sub(G, idx), rhs)
        for u in range(idx.size):
            out[idx[u]] = sol[u]
    return out


OK, SKIPPED, ALL_ZERO = 0, 1, 2


@njit(cache=True)
def _point(G, c, count, lam):
    """Penalty-mode (``lam >= 0``) or count-mode (``count >= 1``) solution.

    Returns ``(beta, lambda_effective, status)``.
    """
    p = c.size
    lam_max = 2.0 * np.abs(c).max()
    if count < 0:
        if lam >= lam_max:
            return np.zeros(p), lam, OK
        if lam == 0.0:
            return np.linalg.solve(G, c), 0.0, OK
        gam, bet, cnt, _, _ = _path_arrays(G, c, -1, 8 * p + 8)
        g = 0.5 * lam
        beta = bet[gam.size - 1]
        for i in range(gam.size - 1):
            if gam[i + 1] <= g <= gam[i]:
                span = gam[i] - gam[i + 1]
                w = 0.0 if span == 0.0 else (gam[i] - g) / span
                beta = (1.0 - w) * bet[i] + w * bet[i + 1]
                break
        return _polish(G, c, beta, g), lam, OK

    if lam_max == 0.0:
        return np.zeros(p), 0.0, ALL_ZERO
    if count == p:
        # the full path ends at the unpenalized solution
        beta = np.linalg.solve(G, c)
        return beta, 0.0, OK if np.all(beta != 0.0) else SKIPPED
    gam, bet, cnt, _, drp = _path_arrays(G, c, count, 8 * p + 8)
    best = -1
    for i in range(gam.size - 1):
        m = cnt[i]
        if m > count:
            break
        if m == count:
            if drp[i + 1]:
                g = 0.5 * (gam[i] + gam[i + 1])
                return _polish(G, c, 0.5 * (bet[i] + bet[i + 1]), g), 2.0 * g, OK
            g = gam[i + 1]
            return _polish(G, c, bet[i + 1], g), 2.0 * g, OK
        if best < 0 or m >= cnt[best]:
            best = i
    if best < 0:
        return np.zeros(p), lam_max, SKIPPED
    return bet[best + 1].copy(), 2.0 * gam[best + 1], SKIPPED


def _finish(G, c, yty, beta, lam, reached=True):
    return PenalizedLsSolution(
        beta=beta,
        lambda_effective=float(lam),
        active_count=int(np.count_nonzero(beta)),
        objective=objective(G, c, beta, lam, yty),
        kkt_residual=kkt_residual(G, c, beta, lam),
        count_reached=reached,
    )


def solve_penalized_ls(prob):
    """Solve a Gram-form LASSO problem.

    In penalty mode (``prob.lam``) the exact minimizer is returned.  In
    count mode (``prob.count = r``) the homotopy is followed from
    ``lam_max`` downward and the first stretch with exactly ``r`` active
    variables is used; the returned point is its least-penalized end (the
    knot where the next variable is about to enter), so ``r = p`` gives the
    unpenalized solution.  If the path jumps over ``r``, the solution with
    the largest count below ``r`` is returned with ``count_reached=False``
    and a ``CountUnreachable`` warning.
    """
    _check_gram(prob.gram)
    return _solve(prob.gram, prob.xty, prob.yty, prob.lam, prob.count)


def _solve(G, c, yty=0.0, lam=None, count=None):
    G = np.ascontiguousarray(G, dtype=float)
    c = np.ascontiguousarray(c, dtype=float)
    if lam is not None:
        beta, lam_eff, status = _point(G, c, -1, float(lam))
    else:
        beta, lam_eff, status = _point(G, c, int(count), -1.0)
    if status == ALL_ZERO:
        warnings.warn("all cross-moments are zero; solution is identically 0", CountUnreachable)
    elif status == SKIPPED:
        warnings.warn(f"LASSO path skips {count} active variables", CountUnreachable)
    return _finish(G, c, yty, beta, lam_eff, status == OK)
