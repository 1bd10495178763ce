"""Stability paths for choosing the sparsity level of the first component.

For each half-sample and each ``r = 1..p`` the first SICS loading vector is
fitted with ``r`` nonzeros; ``probabilities[k, r-1]`` is the fraction of
half-samples in which variable ``k`` is active.  A variable is important when
its path lies above the random-selection line ``r / p`` on balance.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import logging
import warnings

import numpy as np

from .errors import CountUnreachable, NoConvergenceWarning, SicsError, TooManyFailures
from .ics import ics_solve
from .scatter import compute_pair
from .sparse_ics import SicsConfig, sics_fit

log = logging.getLogger(__name__)

MAX_SKIP_FRACTION = 0.2


@dataclass
class StabilityPaths:
    probabilities: np.ndarray
    n_subsamples: int
    subsample_size: int
    seed: int
    areas: np.ndarray
    n_skipped: int = 0
    names: list = field(default_factory=list)

    @property
    def p(self):
        return self.probabilities.shape[0]

    def rows(self):
        """``(variable, r, probability)`` triples in variable-major order."""
        names = self.names or [str(k + 1) for k in range(self.p)]
        return [(names[k], r + 1, float(self.probabilities[k, r]))
                for k in range(self.p) for r in range(self.p)]

    def summary(self):
        names = self.names or [str(k + 1) for k in range(self.p)]
        return {
            "variables": list(names),
            "areas": [float(a) for a in self.areas],
            "important": [names[k] for k in sorted(important_variables(self))],
            "n_subsamples": int(self.n_subsamples),
            "n_skipped": int(self.n_skipped),
            "subsample_size": int(self.subsample_size),
            "seed": int(self.seed),
        }


def path_areas(probabilities):
    """Signed sums ``sum_r (P[k, r] - r / p)`` over ``r = 1..p``."""
    P = np.asarray(probabilities, dtype=float)
    p = P.shape[0]
    return (P - np.arange(1, p + 1) / p).sum(axis=1)


def important_variables(paths):
    """Indices whose path area is strictly positive."""
    return {int(k) for k in np.flatnonzero(paths.areas > 0)}


def _active_sets(Xs, pair, max_outer_iter):
    """``(p, p)`` 0/1 matrix: column ``r-1`` marks the support at sparsity ``r``."""
    S1, S2 = compute_pair(Xs, pair)
    p = Xs.shape[1]
    out = np.zeros((p, p), dtype=np.int64)
    for r in range(1, p + 1):
        if r == p:
            b = ics_solve(S1, S2, 1).B[:, 0]
        else:
            cfg = SicsConfig(k=1, counts=r, max_outer_iter=max_outer_iter)
            b = sics_fit(S1, S2, cfg).B[:, 0]
        out[:, r - 1] = b != 0
    return out


def _one(X, m, pair, seed, s, max_outer_iter):
    rng = np.random.default_rng([seed, s])
    idx = rng.choice(X.shape[0], m, replace=False)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CountUnreachable)
        warnings.simplefilter("ignore", NoConvergenceWarning)
        try:
            return _active_sets(X[idx], pair, max_outer_iter)
        except (SicsError, np.linalg.LinAlgError) as exc:
            log.warning("subsample %d skipped: %s: %s", s, type(exc).__name__, exc)
            return None


def stability_paths(X, pair="fobi", n_subsamples=1500, seed=0, threads=1, names=None,
                    max_outer_iter=200):
    """Selection probabilities over half-samples drawn without replacement.

    Parameters
    ----------
    X : (n, p) array
        Requires ``n >= 2p``.
    pair : str or explicit scatter pair
        ``"fobi"`` by default; robust pairs re-run an O(n^2) fit per subsample.
    n_subsamples : int
    seed : int
        Subsample ``s`` is drawn from ``default_rng([seed, s])``.
    threads : int
        Worker threads; the result does not depend on it.
    names : list of str, optional

    Raises
    ------
    TooManyFailures
        If more than 20% of subsamples fail.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("data must be an n x p matrix")
    n, p = X.shape
    if n < 2 * p:
        raise ValueError(f"stability paths need n >= 2p (n={n}, p={p})")
    if n_subsamples < 1:
        raise ValueError("n_subsamples must be positive")
    if names is not None and len(names) != p:
        raise ValueError("names must have one entry per column")
    m = n // 2

    def job(s):
        return _one(X, m, pair, seed, s, max_outer_iter)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(job, range(n_subsamples)))
    else:
        results = [job(s) for s in range(n_subsamples)]

    ok = [res for res in results if res is not None]
    skipped = n_subsamples - len(ok)
    if skipped > MAX_SKIP_FRACTION * n_subsamples:
        raise TooManyFailures(f"{skipped} of {n_subsamples} subsamples failed")
    # integer sums are exact, so the merge order does not matter
    P = np.sum(ok, axis=0) / len(ok)
    return StabilityPaths(P, n_subsamples, m, int(seed), path_areas(P), skipped,
                          list(names) if names is not None else [])
