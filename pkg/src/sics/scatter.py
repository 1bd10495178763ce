"""Scatter matrix estimators.

Covariance, the fourth-moment FOBI matrix and symmetrized M-estimators of
scatter (identity, Tyler, Huber and multivariate-t weights).  Symmetrized
estimators work on all ``n(n-1)/2`` pairwise differences and are solved by
fixed-point iteration on the weighted estimating equation.

Raw symmetrized estimators keep the scale of pairwise differences: the
identity weight gives exactly twice the unbiased covariance.  ``compute_pair``
optionally divides by a Gaussian consistency factor so that pairs of
estimators are on the covariance scale.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import logging

import numpy as np
from scipy import integrate, optimize, stats

from .errors import NoConvergence, Singular

log = logging.getLogger(__name__)

ESTIMATORS = ("cov", "fobi", "sym_huber", "sym_tmle", "sym_tyler", "sym_cov")
WEIGHT_KINDS = ("identity", "tyler", "huber", "tmle")

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 500
# pairwise differences are cached when they fit in this many bytes
DIFF_CACHE_BYTES = 512 * 2**20
PAIR_CHUNK = 1 << 13


@dataclass(frozen=True)
class ScatterEstimate:
    matrix: np.ndarray
    estimator_id: str
    converged: bool = True
    iterations: int = 0
    residual: float = 0.0
    scale_factor: float = 1.0

    def rescaled(self, factor):
        """Copy with ``matrix / factor``; records the factor used."""
        return ScatterEstimate(self.matrix / factor, self.estimator_id, self.converged,
                               self.iterations, self.residual, self.scale_factor * factor)

    def to_dict(self):
        return {
            "estimator": self.estimator_id,
            "matrix": self.matrix.tolist(),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "residual": float(self.residual),
            "scale_factor": float(self.scale_factor),
        }


def huber_constants(p, q):
    """Tuning constants of the Huber weight.

    ``c`` satisfies ``P(chi2_p <= c**2 / 2) = q``.  The weight clips the
    squared Mahalanobis distance of a pairwise difference at
    ``t = c**2 / 2``, so at Gaussian data (where that distance is chi2_p at
    the fixed point) a fraction ``q`` of pairs is unclipped.  ``sigma``
    makes ``E[w(chi2_p)] = p``::

        sigma = F_{p+2}(t) + t * (1 - F_p(t)) / p

    Returns
    -------
    (c, sigma) : tuple of float
    """
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie strictly between 0 and 1")
    t = stats.chi2.ppf(q, p)
    c = float(np.sqrt(2.0 * t))
    sigma = float(stats.chi2.cdf(t, p + 2) + t * stats.chi2.sf(t, p) / p)
    return c, sigma


@dataclass(frozen=True)
class WeightSpec:
    """Weight function ``w(z)`` of an M-estimator of scatter.

    ``z`` is the squared Mahalanobis norm.  Kinds: ``identity`` (w = z),
    ``tyler`` (w = p), ``huber`` (w = min(z, c^2/2) / sigma) and ``tmle``
    (w = (nu + p) z / (nu + z), the multivariate t likelihood weight).
    """

    kind: str
    p: int
    nu: float = 1.0
    huber_q: float = 0.9
    c: float = field(init=False, default=float("nan"))
    sigma: float = field(init=False, default=float("nan"))

    def __post_init__(self):
        if self.kind not in WEIGHT_KINDS:
            raise ValueError(f"unknown weight kind {self.kind!r}")
        if self.p < 1:
            raise ValueError("p must be positive")
        if self.kind == "tmle" and not self.nu > 0:
            raise ValueError("nu must be positive")
        if self.kind == "huber":
            c, sigma = huber_constants(self.p, self.huber_q)
            object.__setattr__(self, "c", c)
            object.__setattr__(self, "sigma", sigma)

    @property
    def clip(self):
        """Clipping point of the Huber weight on the squared distance."""
        return 0.5 * self.c**2

    def weight(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "identity":
            return z.copy()
        if self.kind == "tyler":
            return np.full_like(z, float(self.p))
        if self.kind == "huber":
            return np.minimum(z, self.clip) / self.sigma
        return (self.nu + self.p) * z / (self.nu + z)

    def ratio(self, z):
        """``w(z) / z``, finite at ``z = 0`` for every kind except Tyler."""
        z = np.asarray(z, dtype=float)
        if self.kind == "identity":
            return np.ones_like(z)
        if self.kind == "tyler":
            with np.errstate(divide="ignore"):
                return np.where(z > 0, self.p / np.where(z > 0, z, 1.0), 0.0)
        if self.kind == "huber":
            with np.errstate(divide="ignore", invalid="ignore"):
                clipped = self.clip / np.where(z > 0, z, 1.0)
            return np.where(z <= self.clip, 1.0, clipped) / self.sigma
        return (self.nu + self.p) / (self.nu + z)

    def bound(self):
        """Supremum of ``w`` over ``[0, inf)``."""
        if self.kind == "identity":
            return np.inf
        if self.kind == "tyler":
            return float(self.p)
        if self.kind == "huber":
            return self.clip / self.sigma
        return float(self.nu + self.p)


def _as_data(X, min_rows):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("data must be an n x p matrix")
    if not np.all(np.isfinite(X)):
        raise ValueError("data contain non-finite values")
    if X.shape[0] < min_rows:
        raise ValueError(f"need at least {min_rows} rows, got {X.shape[0]}")
    return X


def _weighted_moments(X, counts):
    if counts is None:
        n = X.shape[0]
        mean = X.mean(axis=0)
        Xc = X - mean
        return n, Xc, None
    counts = np.asarray(counts, dtype=float)
    n = counts.sum()
    mean = counts @ X / n
    return n, X - mean, counts


def covariance(X, counts=None):
    """Unbiased sample covariance (denominator ``n - 1``).

    ``counts`` are optional integer frequency weights for the rows, as
    produced by a bootstrap resample.
    """
    X = _as_data(X, 2 if counts is None else 1)
    n, Xc, w = _weighted_moments(X, counts)
    if n < X.shape[1] + 1:
        raise Singular("covariance needs n >= p + 1")
    C = (Xc.T * w) @ Xc if w is not None else Xc.T @ Xc
    C = 0.5 * (C + C.T) / (n - 1)
    _check_spd(C, "covariance")
    return ScatterEstimate(C, "cov")


def _check_spd(S, what):
    lam = np.linalg.eigvalsh(S)
    if lam[-1] <= 0 or lam[0] <= 1e-12 * lam[-1]:
        raise Singular(f"{what} is singular (rank deficient data)")


def fobi(X, counts=None):
    """FOBI matrix ``(1/n) sum_i (xc_i' C^{-1} xc_i) xc_i xc_i'``.

    ``xc_i`` are centred rows and ``C`` the unbiased covariance.
    """
    X = _as_data(X, 2 if counts is None else 1)
    C = covariance(X, counts).matrix
    n, Xc, w = _weighted_moments(X, counts)
    r2 = np.einsum("ij,ij->i", Xc @ np.linalg.inv(C), Xc)
    if w is not None:
        r2 = r2 * w
    S = (Xc.T * r2) @ Xc / n
    S = 0.5 * (S + S.T)
    _check_spd(S, "FOBI matrix")
    return ScatterEstimate(S, "fobi")


class _PairDifferences:
    """All pairwise differences ``x_i - x_j`` (i < j) in lexicographic chunks.

    Chunks have a fixed layout independent of the worker count, and
    partial sums are merged in chunk order, so results do not depend on
    ``threads``.
    """

    def __init__(self, X, counts=None, chunk=PAIR_CHUNK, threads=1):
        n, p = X.shape
        self.X = X
        self.p = p
        self.threads = max(1, int(threads))
        iu, ju = np.triu_indices(n, 1)
        if counts is None:
            self.n_eff = n
            self.n_zero = 0.0
            mult = None
        else:
            counts = np.asarray(counts, dtype=float)
            self.n_eff = counts.sum()
            # pairs of copies of the same row: zero differences, not enumerated
            self.n_zero = 0.5 * float(counts @ (counts - 1))
            mult = counts[iu] * counts[ju]
        self.n_pairs = 0.5 * self.n_eff * (self.n_eff - 1)
        bounds = list(range(0, iu.size, chunk)) + [iu.size]
        self.slices = [(a, b) for a, b in zip(bounds[:-1], bounds[1:])]
        self.iu, self.ju, self.mult = iu, ju, mult
        self.cached = iu.size * p * 8 <= DIFF_CACHE_BYTES
        self.diffs = X[iu] - X[ju] if self.cached else None

    def block(self, s):
        a, b = self.slices[s]
        if self.cached:
            D = self.diffs[a:b]
        else:
            D = self.X[self.iu[a:b]] - self.X[self.ju[a:b]]
        m = None if self.mult is None else self.mult[a:b]
        return D, m

    def reduce(self, fn):
        """Sum ``fn(D, mult)`` over chunks in fixed chunk order."""
        idx = range(len(self.slices))
        if self.threads > 1 and len(self.slices) > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                parts = list(pool.map(lambda s: fn(*self.block(s)), idx))
        else:
            parts = [fn(*self.block(s)) for s in idx]
        total = parts[0]
        for part in parts[1:]:
            total = total + part
        return total


def _weighted_step(pairs, C_inv_T, weight):
    """Whitened weighted scatter ``M`` and mean ratio ``w(d^2)/d^2`` over pairs."""
    p = pairs.p

    def chunk(D, mult):
        Y = D @ C_inv_T
        d2 = np.einsum("ij,ij->i", Y, Y)
        u = weight.ratio(d2)
        if mult is not None:
            u = u * mult
        out = np.empty(p * p + 1)
        out[:-1] = ((Y.T * u) @ Y).ravel()
        out[-1] = u.sum()
        return out

    total = pairs.reduce(chunk)
    if pairs.n_zero:
        total[-1] += pairs.n_zero * float(weight.ratio(0.0))
    total = total / pairs.n_pairs
    M = total[:-1].reshape(p, p)
    return 0.5 * (M + M.T), total[-1]


def _chol(S):
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise Singular("iterate lost positive definiteness") from None


def equation_residual(X, S, weight, counts=None, threads=1):
    """Frobenius residual of the symmetrized estimating equation at ``S``."""
    X = _as_data(X, 2)
    pairs = _PairDifferences(X, counts, threads=threads)
    C = _chol(np.asarray(S, dtype=float))
    M, _ = _weighted_step(pairs, np.linalg.inv(C).T, weight)
    return float(np.linalg.norm(M - np.eye(X.shape[1])))


_IDS = {"identity": "sym_cov", "tyler": "sym_tyler", "huber": "sym_huber", "tmle": "sym_tmle"}


def symmetrized_m_estimator(X, weight, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
                            counts=None, threads=1, pairs=None):
    """Symmetrized M-estimator of scatter.

    Solves

        2/(n(n-1)) sum_{i<j} w(d_ij^2)/d_ij^2 S^{-1/2} (x_i-x_j)(x_i-x_j)' S^{-1/2} = I

    with ``d_ij^2 = |S^{-1/2}(x_i - x_j)|^2`` by the fixed-point update
    ``S <- average of w(d^2)/d^2 (x_i-x_j)(x_i-x_j)'``, started from the
    symmetrized covariance.  Tyler's estimator is rescaled to trace ``p``
    after every sweep; the t weight update is divided by the mean of
    ``w(d^2)/d^2``, which converges in a handful of sweeps instead of
    hundreds and has the same fixed point.

    Parameters
    ----------
    X : (n, p) array_like
    weight : WeightSpec
    tol : float
        Stop when the Frobenius residual of the equation is at most ``tol``.
    max_iter : int
    counts : (n,) array_like, optional
        Row multiplicities; equivalent to repeating row ``i`` ``counts[i]``
        times (duplicate rows give zero differences).
    threads : int
        Workers for the pair reduction.  Results do not depend on it.

    Returns
    -------
    ScatterEstimate

    Raises
    ------
    NoConvergence
        With the last iterate attached as ``best``.
    Singular
        If an iterate loses positive definiteness.
    """
    if pairs is None:
        X = _as_data(X, 2)
        n, p = X.shape
        if (n if counts is None else np.sum(counts)) < p + 2:
            raise ValueError("symmetrized M-estimators need n >= p + 2")
        pairs = _PairDifferences(X, counts, threads=threads)
    p = pairs.p
    if weight.p != p:
        raise ValueError("weight dimension does not match data")
    est_id = _IDS[weight.kind]
    eye = np.eye(p)

    # symmetrized covariance: average of (x_i - x_j)(x_i - x_j)'
    def outer(D, mult):
        return (D.T * mult) @ D if mult is not None else D.T @ D

    S = pairs.reduce(outer) / pairs.n_pairs
    S = 0.5 * (S + S.T)
    _check_spd(S, "symmetrized covariance")
    if weight.kind == "identity":
        return ScatterEstimate(S, est_id, True, 0, 0.0)
    if weight.kind == "tyler":
        S = S * p / np.trace(S)

    residual = np.inf
    for it in range(1, max_iter + 1):
        C = _chol(S)
        C_inv = np.linalg.inv(C)
        M, mean_ratio = _weighted_step(pairs, C_inv.T, weight)
        residual = float(np.linalg.norm(M - eye))
        if residual <= tol:
            return ScatterEstimate(S, est_id, True, it - 1, residual)
        S = C @ M @ C.T
        S = 0.5 * (S + S.T)
        if weight.kind == "tmle":
            # the mean ratio is exactly 1 at the t fixed point; dividing by it
            # leaves the solution unchanged and removes the slow scale mode
            S = S / mean_ratio
        if weight.kind == "tyler":
            S = S * p / np.trace(S)
    raise NoConvergence(f"{est_id} did not converge in {max_iter} iterations "
                        f"(residual {residual:.3g})",
                        best=ScatterEstimate(S, est_id, False, max_iter, residual),
                        residual=residual, iterations=max_iter)


def weight_for(estimator_id, p, **params):
    kind = {"sym_cov": "identity", "sym_tyler": "tyler",
            "sym_huber": "huber", "sym_tmle": "tmle"}[estimator_id]
    kwargs = {}
    if "nu" in params:
        kwargs["nu"] = float(params["nu"])
    if "q" in params:
        kwargs["huber_q"] = float(params["q"])
    return WeightSpec(kind, p, **kwargs)


def gaussian_consistency_factor(weight):
    """Scale ``kappa`` of a symmetrized estimator at the Gaussian model.

    For ``x ~ N(mu, Sigma)`` the raw symmetrized estimate converges to
    ``kappa * Sigma``; dividing by ``kappa`` puts it on the covariance scale.
    At ``S = kappa Sigma`` the squared distance of a difference is
    ``(2 / kappa) chi2_p``, and ``kappa`` solves ``E[w((2/kappa) chi2_p)] = p``.
    Tyler's estimator has no intrinsic scale and returns 1.
    """
    p = weight.p
    if weight.kind == "tyler":
        return 1.0
    if weight.kind == "identity":
        return 2.0
    dist = stats.chi2(p)

    def excess(log_kappa):
        factor = 2.0 / np.exp(log_kappa)
        val, _ = integrate.quad(lambda z: weight.weight(factor * z) * dist.pdf(z),
                                0, np.inf, limit=200)
        return val - p

    root = optimize.brentq(excess, np.log(1e-3), np.log(1e3), xtol=1e-13)
    return float(np.exp(root))


def estimate(X, estimator_id, params=None, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
             counts=None, threads=1, pairs=None):
    """Dispatch on ``estimator_id`` (one of ``ESTIMATORS``)."""
    params = dict(params or {})
    if estimator_id == "cov":
        return covariance(X, counts)
    if estimator_id == "fobi":
        return fobi(X, counts)
    if estimator_id not in ESTIMATORS:
        raise ValueError(f"unknown estimator {estimator_id!r}")
    X = np.asarray(X, dtype=float)
    w = weight_for(estimator_id, X.shape[1], **params)
    return symmetrized_m_estimator(X, w, tol, max_iter, counts, threads, pairs)


# Named scatter pairs: (estimator id, params) for S1 and S2.
PAIRS = {
    "fobi": (("cov", {}), ("fobi", {})),
    "robust": (("sym_tmle", {"nu": 1.0}), ("sym_huber", {"q": 0.9})),
}


def resolve_pair(pair):
    """Accept a pair name or an explicit ``((id, params), (id, params))``."""
    if isinstance(pair, str):
        try:
            return PAIRS[pair]
        except KeyError:
            raise ValueError(f"unknown scatter pair {pair!r}") from None
    (id1, p1), (id2, p2) = pair
    for est in (id1, id2):
        if est not in ESTIMATORS:
            raise ValueError(f"unknown estimator {est!r}")
    return (id1, dict(p1)), (id2, dict(p2))


def compute_pair(X, pair="fobi", tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, counts=None,
                 threads=1, consistent=True):
    """Compute ``(S1, S2)`` for a scatter pair, sharing pairwise differences.

    With ``consistent=True`` symmetrized estimators are divided by their
    Gaussian consistency factor so both scatters live on the covariance
    scale.  The scale of ``S1`` fixes the scale of the unmixing vectors.
    """
    (id1, p1), (id2, p2) = resolve_pair(pair)
    X = _as_data(X, 2 if counts is None else 1)
    pairs = None
    if id1.startswith("sym_") or id2.startswith("sym_"):
        n_eff = X.shape[0] if counts is None else np.sum(counts)
        if n_eff < X.shape[1] + 2:
            raise ValueError("symmetrized M-estimators need n >= p + 2")
        pairs = _PairDifferences(X, counts, threads=threads)
    out = []
    for est_id, params in ((id1, p1), (id2, p2)):
        S = estimate(X, est_id, params, tol, max_iter, counts, threads, pairs)
        if consistent and est_id.startswith("sym_"):
            S = S.rescaled(_consistency(est_id, X.shape[1], params))
        out.append(S)
    return tuple(out)


_KAPPA_CACHE = {}


def _consistency(est_id, p, params):
    key = (est_id, p, tuple(sorted(params.items())))
    if key not in _KAPPA_CACHE:
        _KAPPA_CACHE[key] = gaussian_consistency_factor(weight_for(est_id, p, **params))
    return _KAPPA_CACHE[key]
