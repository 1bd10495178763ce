"""Simulation drivers: IC-model data, contamination, error metrics, studies.

Each study returns a long-format ``pandas.DataFrame`` with one row per
(replicate, method, metric).  Replicate ``i`` of a design cell draws its data
from ``default_rng([seed, study_code, n, p, q, i])`` so a replicate is
identical whatever the thread count or the other cells in the run.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import logging
import re
import time
import warnings

import numpy as np
import pandas as pd
from scipy import stats

from .errors import CountUnreachable, NoConvergenceWarning, SicsError
from .ics import ics_solve
from .matdecomp import sqrtm_spd
from .scatter import compute_pair
from .sparse_ics import SicsConfig, sics_fit

log = logging.getLogger(__name__)

MIXINGS = ("random_sparse_unmixing", "block_diagonal_3")
STUDIES = ("s1", "s2", "s3", "s4", "timing")
MAX_CONDITION = 1e6
MAX_DRAWS = 100

_GAMMA = re.compile(r"^gamma\(\s*([0-9.eE+-]+)\s*,\s*([0-9.eE+-]+)\s*\)$")


def parse_source(tag):
    """Normalize a source tag to ``(kind, shape, rate)``.

    Accepts ``"laplace"``, ``"uniform"``, ``"gaussian"``, ``"gamma(a,b)"`` or a
    tuple ``("gamma", a, b)``.
    """
    if isinstance(tag, (tuple, list)):
        if len(tag) == 3 and tag[0] == "gamma":
            shape, rate = float(tag[1]), float(tag[2])
            if shape <= 0 or rate <= 0:
                raise ValueError("gamma shape and rate must be positive")
            return ("gamma", shape, rate)
        raise ValueError(f"bad source tag {tag!r}")
    tag = str(tag).strip().lower()
    if tag in ("laplace", "uniform", "gaussian"):
        return (tag, None, None)
    m = _GAMMA.match(tag)
    if m:
        return parse_source(("gamma", m.group(1), m.group(2)))
    raise ValueError(f"unknown source distribution {tag!r}")


def draw_source(tag, n, rng):
    """``n`` standardized (zero mean, unit variance) draws."""
    kind, shape, rate = parse_source(tag)
    if kind == "laplace":
        return rng.laplace(0.0, 1.0 / np.sqrt(2.0), n)
    if kind == "uniform":
        return rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), n)
    if kind == "gaussian":
        return rng.standard_normal(n)
    z = rng.gamma(shape, 1.0 / rate, n)
    return (z - shape / rate) / (np.sqrt(shape) / rate)


@dataclass(frozen=True)
class IcModelSpec:
    """Independent component model ``X = Z Omega'``.

    ``source_dists`` lists the first source distributions; any remaining
    components are standard normal.  ``q`` is the number of nonzeros per
    unmixing row for ``random_sparse_unmixing`` and is ignored by
    ``block_diagonal_3``.
    """

    p: int = 15
    q: int = 7
    source_dists: tuple = ("laplace", "uniform")
    mixing: str = "random_sparse_unmixing"
    seed: object = 0

    def __post_init__(self):
        if self.p < 1 or not 1 <= self.q <= self.p:
            raise ValueError("need 1 <= q <= p")
        if len(self.source_dists) > self.p:
            raise ValueError("more source distributions than dimensions")
        for tag in self.source_dists:
            parse_source(tag)
        if self.mixing not in MIXINGS:
            raise ValueError(f"mixing must be one of {MIXINGS}")
        if self.mixing == "block_diagonal_3" and self.p < 3:
            raise ValueError("block_diagonal_3 needs p >= 3")

    @property
    def sources(self):
        return tuple(self.source_dists) + ("gaussian",) * (self.p - len(self.source_dists))


@dataclass(frozen=True)
class ContaminationSpec:
    fraction: float = 0.05
    noise_sd: float = 3.0
    seed: object = 0

    def __post_init__(self):
        if not 0 <= self.fraction < 1:
            raise ValueError("contamination fraction must lie in [0, 1)")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be non-negative")


def random_sparse_unmixing(p, q, rng):
    """Rows with ``q`` nonzeros from Uniform([-3,-1] u [1,3]); redraws if ill-conditioned."""
    for _ in range(MAX_DRAWS):
        W = np.zeros((p, p))
        for i in range(p):
            idx = rng.choice(p, q, replace=False)
            W[i, idx] = rng.uniform(1.0, 3.0, q) * rng.choice((-1.0, 1.0), q)
        if np.linalg.cond(W) <= MAX_CONDITION:
            return W
    raise SicsError(f"no unmixing matrix with condition <= {MAX_CONDITION:g} "
                    f"in {MAX_DRAWS} draws (p={p}, q={q})")


def block_diagonal_mixing(p):
    """``Omega`` with top-left block ``(0.5 I + 0.5 J)^{1/2}`` and identity elsewhere."""
    Omega = np.eye(p)
    Omega[:3, :3] = sqrtm_spd(0.5 * np.eye(3) + 0.5 * np.ones((3, 3)))
    return Omega


def generate(spec, n):
    """Draw ``(X, unmixing)`` with ``X = Z Omega'`` and ``unmixing = Omega^{-1}``."""
    rng = np.random.default_rng(spec.seed)
    if spec.mixing == "random_sparse_unmixing":
        unmixing = random_sparse_unmixing(spec.p, spec.q, rng)
        Omega = np.linalg.inv(unmixing)
    else:
        Omega = block_diagonal_mixing(spec.p)
        unmixing = np.linalg.inv(Omega)
    Z = np.column_stack([draw_source(tag, n, rng) for tag in spec.sources])
    return Z @ Omega.T, unmixing


def contaminate(X, spec):
    """Replace ``round(fraction * n)`` random rows by ``N(0, noise_sd^2)`` noise."""
    X = np.array(X, dtype=float, copy=True)
    n, p = X.shape
    m = int(np.floor(spec.fraction * n + 0.5))
    if m == 0:
        return X
    rng = np.random.default_rng(spec.seed)
    rows = rng.choice(n, m, replace=False)
    X[rows] = rng.normal(0.0, spec.noise_sd, (m, p))
    return X


def loading_error(estimate, truth, norm="l1"):
    """Distance between loading vectors, minimized over the global sign."""
    b = np.asarray(estimate, dtype=float).ravel()
    t = np.asarray(truth, dtype=float).ravel()
    if b.shape != t.shape:
        raise ValueError(f"length mismatch: {b.size} vs {t.size}")
    ord_ = {"l1": 1, "l2": 2}[norm]
    return float(min(np.linalg.norm(b - t, ord_), np.linalg.norm(b + t, ord_)))


def _drop_order(b, r):
    b = np.asarray(b, dtype=float)
    if not 0 <= r <= b.size:
        raise ValueError(f"r must lie in 0..{b.size}")
    # stable: among equal magnitudes the lower index survives
    return np.argsort(-np.abs(b), kind="stable")[r:]


def hard_threshold(b, r):
    """Keep the ``r`` largest magnitudes, zero the rest."""
    out = np.array(b, dtype=float, copy=True)
    out[_drop_order(out, r)] = 0.0
    return out


def soft_threshold(b, r):
    """Hard threshold, then shrink survivors by the largest zeroed magnitude."""
    b = np.asarray(b, dtype=float)
    drop = _drop_order(b, r)
    t = np.abs(b[drop]).max() if drop.size else 0.0
    out = np.sign(b) * np.maximum(np.abs(b) - t, 0.0)
    out[drop] = 0.0
    return out


# ---------------------------------------------------------------- studies

_STUDY_CODE = {name: i + 1 for i, name in enumerate(STUDIES)}

DEFAULTS = {
    "s1": {"n": [500, 1000, 1500, 2000, 2500], "p": [15], "q": [7], "N": 100,
           "contamination": [0.0, 0.05], "noise_sd": 3.0, "pairs": ["fobi", "robust"],
           "norm": "l1"},
    "s2": {"n": [1000], "p": [10, 15, 20], "alpha": [0.1 * i for i in range(1, 11)],
           "N": 50, "contamination": [0.05], "noise_sd": 3.0, "pairs": ["robust"],
           "norm": "l1"},
    "s3": {"n": [1000, 2000], "p": [20, 60, 100], "r": 10, "N": 50,
           "contamination": [0.0], "noise_sd": 3.0, "pairs": ["fobi"], "norm": "l2",
           "sources": ["gamma(1,1)", "gamma(2,1)", "gamma(3,1)"]},
    "s4": {"n": [500, 1000, 1500, 2000, 2500], "p": [15], "q": [7], "N": 100,
           "contamination": [0.0], "noise_sd": 3.0, "pairs": ["fobi"],
           "r_offsets": [-2, 0, 2],
           "norm": "l1"},
    "timing": {"n": [200, 400, 600], "p": [10, 20, 40], "q": [7], "N": 5, "k": 5,
               "r": 7, "contamination": [0.0], "noise_sd": 3.0,
               "pairs": ["fobi", "robust"]},
}

COLUMNS = ["study", "method", "pair", "contamination", "n", "p", "q", "r", "replicate",
           "metric", "value"]


@dataclass
class _Job:
    study: str
    n: int
    p: int
    q: int
    eps: float
    replicate: int
    params: dict = field(default_factory=dict)


def _fit_first(S1, S2, r, p, max_outer_iter=200):
    """First SICS loading vector with ``r`` nonzeros (plain ICS when ``r = p``)."""
    if r >= p:
        return ics_solve(S1, S2, 1).B[:, 0]
    sol = sics_fit(S1, S2, SicsConfig(k=1, counts=r, max_outer_iter=max_outer_iter))
    return sol.B[:, 0]


def _data(job, seed, sources, mixing):
    code = _STUDY_CODE[job.study]
    base = [int(seed), code, job.n, job.p, job.q, job.replicate]
    spec = IcModelSpec(p=job.p, q=job.q, source_dists=tuple(sources), mixing=mixing,
                       seed=base + [0])
    X, unmixing = generate(spec, job.n)
    if job.eps > 0:
        X = contaminate(X, ContaminationSpec(job.eps, job.params["noise_sd"], base + [1]))
    return X, unmixing


def _rows(job, pair, items, metric):
    return [{"study": job.study, "method": method, "pair": pair,
             "contamination": job.eps, "n": job.n, "p": job.p, "q": job.q, "r": rr,
             "replicate": job.replicate, "metric": metric, "value": float(v)}
            for method, rr, v in items]


def _run_s1(job, seed, threads):
    P = job.params
    X, unmixing = _data(job, seed, ("laplace", "uniform"), "random_sparse_unmixing")
    truth = unmixing[0]
    q, p = job.q, job.p
    rows = []
    for pair in P["pairs"]:
        S1, S2 = compute_pair(X, pair, threads=threads)
        dense = _fit_first(S1, S2, p, p)
        items = [("ics", p, loading_error(dense, truth, P["norm"])),
                 ("sics_q", q, loading_error(_fit_first(S1, S2, q, p), truth, P["norm"]))]
        if q + 3 <= p:
            rq3 = q + 3
            items.append(("sics_q+3", rq3,
                          loading_error(_fit_first(S1, S2, rq3, p), truth, P["norm"])))
            items.append(("hard_q+3", rq3,
                          loading_error(hard_threshold(dense, rq3), truth, P["norm"])))
        rows += _rows(job, pair, items, P["norm"])
    return rows


def _run_s2(job, seed, threads):
    P = job.params
    X, unmixing = _data(job, seed, ("laplace", "uniform"), "random_sparse_unmixing")
    truth = unmixing[0]
    rows = []
    for pair in P["pairs"]:
        S1, S2 = compute_pair(X, pair, threads=threads)
        items = [("sics", r, loading_error(_fit_first(S1, S2, r, job.p), truth, P["norm"]))
                 for r in range(1, job.p + 1)]
        rows += _rows(job, pair, items, P["norm"])
    return rows


def _run_s3(job, seed, threads):
    P = job.params
    X, unmixing = _data(job, seed, P["sources"], "block_diagonal_3")
    truth = unmixing[0]
    rows = []
    for pair in P["pairs"]:
        S1, S2 = compute_pair(X, pair, threads=threads)
        r = min(P["r"], job.p)
        items = [("ics", job.p, loading_error(_fit_first(S1, S2, job.p, job.p), truth,
                                              P["norm"])),
                 ("sics", r, loading_error(_fit_first(S1, S2, r, job.p), truth,
                                           P["norm"]))]
        rows += _rows(job, pair, items, P["norm"])
    return rows


def _run_s4(job, seed, threads):
    P = job.params
    X, unmixing = _data(job, seed, ("laplace", "uniform"), "random_sparse_unmixing")
    truth = unmixing[0]
    rows = []
    for pair in P["pairs"]:
        S1, S2 = compute_pair(X, pair, threads=threads)
        dense = _fit_first(S1, S2, job.p, job.p)
        items = []
        for off in P["r_offsets"]:
            r = job.q + off
            if not 1 <= r <= job.p:
                continue
            items += [("sics", r, loading_error(_fit_first(S1, S2, r, job.p), truth,
                                                P["norm"])),
                      ("ics_hard", r, loading_error(hard_threshold(dense, r), truth,
                                                    P["norm"])),
                      ("ics_soft", r, loading_error(soft_threshold(dense, r), truth,
                                                    P["norm"]))]
        rows += _rows(job, pair, items, P["norm"])
    return rows


def _run_timing(job, seed, threads):
    P = job.params
    X, _ = _data(job, seed, ("laplace", "uniform"), "random_sparse_unmixing")
    k, r = min(P["k"], job.p), min(P["r"], job.p)
    rows = []
    for pair in P["pairs"]:
        t0 = time.perf_counter()
        S1, S2 = compute_pair(X, pair, threads=threads)
        phases = {"scatters": time.perf_counter() - t0}
        sics_fit(S1, S2, SicsConfig(k=k, counts=r), timings=phases)
        items = [(name, r, phases.get(name, 0.0))
                 for name in ("scatters", "ics_init", "lasso", "decompositions")]
        rows += _rows(job, pair, items, "seconds")
    return rows


_RUNNERS = {"s1": _run_s1, "s2": _run_s2, "s3": _run_s3, "s4": _run_s4,
            "timing": _run_timing}


def study_params(study, overrides=None):
    """Defaults for ``study`` updated with ``overrides`` (unknown keys rejected)."""
    if study not in STUDIES:
        raise ValueError(f"study must be one of {STUDIES}")
    params = {k: (list(v) if isinstance(v, list) else v) for k, v in DEFAULTS[study].items()}
    for key, val in (overrides or {}).items():
        if key not in params:
            raise ValueError(f"unknown parameter {key!r} for study {study}")
        params[key] = list(val) if isinstance(params[key], list) and not isinstance(
            val, str) and np.iterable(val) else val
    if int(params["N"]) < 1:
        raise ValueError("N must be at least 1")
    return params


def _jobs(study, params):
    jobs = []
    for n in params["n"]:
        for p in params["p"]:
            if study == "s2":
                qs = sorted({max(1, int(np.floor(a * p + 1e-9))) for a in params["alpha"]})
            elif study == "s3":
                qs = [3]
            else:
                qs = [q for q in params["q"] if q <= p]
            for q in qs:
                for eps in params["contamination"]:
                    for i in range(int(params["N"])):
                        jobs.append(_Job(study, int(n), int(p), int(q), float(eps), i,
                                         params))
    return jobs


def _safe(job, seed, threads):
    runner = _RUNNERS[job.study]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CountUnreachable)
        warnings.simplefilter("ignore", NoConvergenceWarning)
        try:
            return runner(job, seed, threads), None
        except (SicsError, np.linalg.LinAlgError) as exc:
            reason = f"{type(exc).__name__}: {exc}"
            log.warning("replicate %d (n=%d, p=%d, q=%d, eps=%g) failed: %s",
                        job.replicate, job.n, job.p, job.q, job.eps, reason)
            return [], {"n": job.n, "p": job.p, "q": job.q, "contamination": job.eps,
                        "replicate": job.replicate, "reason": reason}


def run_study(study, overrides=None, seed=0, threads=1):
    """Run a simulation study.

    Parameters
    ----------
    study : {"s1", "s2", "s3", "s4", "timing"}
    overrides : dict, optional
        Replaces entries of ``DEFAULTS[study]``, e.g. ``{"n": [500], "N": 10}``.
    seed : int
    threads : int
        Replicates run on this many worker threads; results do not depend on it.

    Returns
    -------
    pandas.DataFrame
        Long table with columns ``COLUMNS``.  Failed replicates are excluded
        and listed in ``df.attrs["failures"]``.
    """
    params = study_params(study, overrides)
    jobs = _jobs(study, params)
    if threads > 1:
        # scatter estimators get one thread each so results are thread-count free
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda j: _safe(j, seed, 1), jobs))
    else:
        results = [_safe(j, seed, 1) for j in jobs]
    rows = [row for res, _ in results for row in res]
    failures = [fail for _, fail in results if fail is not None]
    df = pd.DataFrame(rows, columns=COLUMNS)
    df = df.sort_values(["method", "pair", "contamination", "n", "p", "q", "r",
                         "replicate", "metric"], kind="stable", na_position="first")
    df = df.reset_index(drop=True)
    df.attrs["failures"] = failures
    df.attrs["params"] = params
    return df


def _mad(x):
    return float(stats.median_abs_deviation(x, scale="normal"))


def plot_data(df):
    """Median and MAD of ``value`` per design cell (replicates pooled)."""
    keys = [c for c in COLUMNS if c not in ("replicate", "value")]
    g = df.groupby(keys, dropna=False, sort=True)["value"]
    out = g.agg(median="median", mad=_mad, replicates="count").reset_index()
    return out


def optimal_r(df):
    """Study s2: the ``r`` with the smallest median error per ``(pair, n, p, q)``."""
    agg = plot_data(df[df["method"] == "sics"])
    idx = agg.groupby(["pair", "contamination", "n", "p", "q"])["median"].idxmin()
    best = agg.loc[idx, ["pair", "contamination", "n", "p", "q", "r", "median"]]
    best = best.rename(columns={"r": "r_opt"}).reset_index(drop=True)
    best["r_opt_over_p"] = best["r_opt"] / best["p"]
    best["alpha"] = best["q"] / best["p"]
    return best
