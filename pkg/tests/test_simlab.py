import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from sics.errors import SicsError
from sics import simlab
from sics.simlab import (COLUMNS, ContaminationSpec, IcModelSpec, contaminate, draw_source,
                         generate, hard_threshold, loading_error, optimal_r, parse_source,
                         plot_data, random_sparse_unmixing, run_study, soft_threshold,
                         study_params)


def test_hard_threshold_example():
    np.testing.assert_array_equal(hard_threshold([3, -0.1, 2, 0.05], 2), [3, 0, 2, 0])


def test_soft_threshold_example():
    np.testing.assert_allclose(soft_threshold([3, -0.1, 2, 0.05], 2), [2.9, 0, 1.9, 0],
                               atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=12), st.data())
def test_threshold_properties(b, data):
    b = np.array(b)
    r = data.draw(st.integers(0, b.size))
    h, s = hard_threshold(b, r), soft_threshold(b, r)
    assert np.count_nonzero(h) <= r and np.count_nonzero(s) <= r
    top = np.sort(np.abs(b))[::-1]
    np.testing.assert_array_equal(np.sort(np.abs(h))[::-1][:r], top[:r])
    t = top[r] if r < b.size else 0.0
    kept = h != 0
    np.testing.assert_allclose(np.abs(s[kept]), np.maximum(np.abs(b[kept]) - t, 0), atol=1e-12)
    assert np.all(s * b >= 0)


@pytest.mark.parametrize("est, truth, err", [
    ([1.0, 2.0], [1.0, 2.0], 0.0),
    ([-1.0, -2.0], [1.0, 2.0], 0.0),
    ([1.0, 0.0], [0.0, 1.0], 2.0),
])
def test_loading_error_examples(est, truth, err):
    assert loading_error(est, truth) == err


def test_loading_error_l2_and_mismatch():
    assert loading_error([3.0, 0.0], [0.0, 4.0], norm="l2") == pytest.approx(5.0)
    with pytest.raises(ValueError):
        loading_error([1.0], [1.0, 2.0])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3),
       st.lists(st.floats(-5, 5), min_size=3, max_size=3))
def test_loading_error_properties(b, t):
    b, t = np.array(b), np.array(t)
    e = loading_error(b, t)
    assert e >= 0
    assert e == loading_error(-b, t) == loading_error(b, -t)
    assert loading_error(b, b) == 0.0


@pytest.mark.parametrize("p, q", [(15, 7), (10, 3), (5, 5), (4, 1)])
def test_unmixing_rows_have_q_nonzeros(p, q):
    _, W = generate(IcModelSpec(p=p, q=q, seed=p * 100 + q), 50)
    assert np.all(np.count_nonzero(W, axis=1) == q)
    nz = np.abs(W[W != 0])
    assert np.all((nz >= 1) & (nz <= 3))
    assert np.linalg.cond(W) <= simlab.MAX_CONDITION


def test_unmixing_rejection_gives_up():
    # q = 1 on p = 4 is singular unless the supports form a permutation
    class Always:
        def choice(self, p, q, replace=False):
            return np.zeros(q, dtype=int) if isinstance(p, int) else np.ones(q)

        def uniform(self, lo, hi, q):
            return np.full(q, 2.0)

    with pytest.raises(SicsError):
        random_sparse_unmixing(4, 1, Always())


def test_generate_deterministic_and_model():
    spec = IcModelSpec(p=6, q=3, seed=11)
    X1, W1 = generate(spec, 300)
    X2, W2 = generate(spec, 300)
    assert np.array_equal(X1, X2) and np.array_equal(W1, W2)
    Z = X1 @ W1.T
    assert Z.shape == (300, 6)
    # sources: laplace, uniform, then gaussian
    assert stats.kurtosis(Z[:, 0]) > 1.5 and stats.kurtosis(Z[:, 1]) < -0.8


def test_gaussian_negative_control_dense():
    X, W = generate(IcModelSpec(p=4, q=4, source_dists=(), seed=0), 20_000)
    assert np.all(W != 0)
    assert np.all(np.abs(stats.kurtosis(X @ W.T)) < 0.15)


@pytest.mark.parametrize("tag", ["laplace", "uniform", "gaussian", "gamma(2,1)", ("gamma", 3, 2)])
def test_sources_standardized(tag):
    z = draw_source(tag, 200_000, np.random.default_rng(0))
    assert abs(z.mean()) < 0.01 and abs(z.std() - 1) < 0.01


@pytest.mark.parametrize("tag", ["cauchy", "gamma(0,1)", ("beta", 1, 2)])
def test_bad_source_tags(tag):
    with pytest.raises(ValueError):
        parse_source(tag)


def test_block_diagonal_mixing():
    X, W = generate(IcModelSpec(p=6, q=3, mixing="block_diagonal_3", seed=1), 10)
    Omega = np.linalg.inv(W)
    np.testing.assert_allclose(Omega[:3, :3] @ Omega[:3, :3], 0.5 * np.eye(3) + 0.5, atol=1e-12)
    np.testing.assert_array_equal(Omega[3:, 3:], np.eye(3))
    assert np.all(Omega[:3, 3:] == 0)


def test_contamination_zero_fraction():
    X = np.random.default_rng(0).standard_normal((20, 3))
    assert np.array_equal(contaminate(X, ContaminationSpec(0.0)), X)


def test_contamination_counts_and_sd():
    X = np.zeros((1000, 5))
    Y = contaminate(X, ContaminationSpec(0.05, 3.0, seed=2))
    changed = np.any(Y != 0, axis=1)
    assert changed.sum() == 50
    assert Y[changed].std() == pytest.approx(3.0, rel=0.1)


@pytest.mark.parametrize("eps, n, m", [(0.05, 30, 2), (0.025, 100, 3), (0.1, 15, 2)])
def test_contamination_round_half_up(eps, n, m):
    Y = contaminate(np.zeros((n, 2)), ContaminationSpec(eps, 1.0, seed=0))
    assert np.any(Y != 0, axis=1).sum() == m


@pytest.mark.parametrize("bad", [dict(fraction=1.0), dict(fraction=-0.1), dict(noise_sd=-1.0)])
def test_contamination_validation(bad):
    with pytest.raises(ValueError):
        ContaminationSpec(**bad)


def test_spec_validation():
    with pytest.raises(ValueError):
        IcModelSpec(p=3, q=4)
    with pytest.raises(ValueError):
        IcModelSpec(mixing="nope")


SMALL = {
    "s1": {"n": [200], "p": [6], "q": [2], "N": 2, "contamination": [0.0, 0.05],
           "pairs": ["fobi"]},
    "s2": {"n": [300], "p": [5], "alpha": [0.4], "N": 2, "pairs": ["fobi"]},
    "s3": {"n": [300], "p": [6], "N": 2},
    "s4": {"n": [300], "p": [6], "q": [2], "N": 2},
    "timing": {"n": [100], "p": [5], "q": [2], "N": 1, "k": 2, "r": 3},
}


@pytest.mark.parametrize("study", sorted(SMALL))
def test_studies_small(study):
    df = run_study(study, SMALL[study], seed=3)
    assert list(df.columns) == COLUMNS
    assert len(df) > 0 and not df.attrs["failures"]
    assert np.all(np.isfinite(df["value"])) and np.all(df["value"] >= 0)
    again = run_study(study, SMALL[study], seed=3)
    if study != "timing":
        assert df.equals(again)
    agg = plot_data(df)
    assert {"median", "mad", "replicates"} <= set(agg.columns)


def test_study_methods():
    df = run_study("s4", SMALL["s4"], seed=1)
    assert set(df["method"]) == {"sics", "ics_hard", "ics_soft"}
    df = run_study("s1", SMALL["s1"], seed=1)
    assert set(df["method"]) == {"ics", "sics_q", "sics_q+3", "hard_q+3"}


def test_s2_optimal_r():
    df = run_study("s2", SMALL["s2"], seed=0)
    best = optimal_r(df)
    assert len(best) == 1 and 1 <= best["r_opt"].iloc[0] <= 5


def test_threads_do_not_change_studies():
    a = run_study("s1", SMALL["s1"], seed=5, threads=1)
    b = run_study("s1", SMALL["s1"], seed=5, threads=3)
    assert a.equals(b)


def test_unknown_override_rejected():
    with pytest.raises(ValueError):
        study_params("s1", {"bogus": 1})
    with pytest.raises(ValueError):
        study_params("s9")
