import numpy as np
import pytest

from sics.errors import TooManyFailures
from sics.stability import StabilityPaths, important_variables, path_areas, stability_paths


def single_signal(seed, n=400, p=5):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    X[:, 0] = rng.laplace(size=n) * 2
    return X


@pytest.fixture(scope="module")
def signal_paths():
    return stability_paths(single_signal(0), n_subsamples=40, seed=1)


def test_shapes_and_bounds(signal_paths):
    P = signal_paths.probabilities
    assert P.shape == (5, 5)
    assert np.all((P >= 0) & (P <= 1))
    assert signal_paths.subsample_size == 200
    assert signal_paths.n_skipped == 0


def test_last_column_all_ones(signal_paths):
    np.testing.assert_array_equal(signal_paths.probabilities[:, -1], 1.0)


def test_column_sums_at_most_r(signal_paths):
    sums = signal_paths.probabilities.sum(axis=0)
    assert np.all(sums <= np.arange(1, 6) + 1e-12)


def test_single_signal_variable(signal_paths):
    assert np.all(signal_paths.probabilities[0] >= 0.9)
    assert signal_paths.areas[0] > 1.5
    assert important_variables(signal_paths) == {0}


def test_pure_noise_has_small_areas(signal_paths):
    X = np.random.default_rng(2).standard_normal((400, 5))
    noise = stability_paths(X, n_subsamples=40, seed=1)
    assert np.abs(noise.areas).max() < signal_paths.areas[0]


def test_area_of_average_line_is_zero():
    p = 6
    line = np.tile(np.arange(1, p + 1) / p, (p, 1))
    np.testing.assert_allclose(path_areas(line), 0.0, atol=1e-15)
    P = np.ones((p, p))
    P[2] = np.arange(1, p + 1) / p
    paths = StabilityPaths(P, 1, 1, 0, path_areas(P))
    assert 2 not in important_variables(paths)


def test_path_area_formula():
    P = np.array([[1.0, 1.0], [0.0, 1.0]])
    np.testing.assert_allclose(path_areas(P), [0.5, -0.5])


def test_deterministic_and_thread_free():
    X = single_signal(3, n=200, p=4)
    a = stability_paths(X, n_subsamples=12, seed=5)
    b = stability_paths(X, n_subsamples=12, seed=5, threads=3)
    assert np.array_equal(a.probabilities, b.probabilities)
    assert np.array_equal(a.areas, b.areas)


def test_label_equivariance():
    X = single_signal(4, n=200, p=4)
    perm = np.array([2, 0, 3, 1])
    a = stability_paths(X, n_subsamples=15, seed=0)
    b = stability_paths(X[:, perm], n_subsamples=15, seed=0)
    np.testing.assert_allclose(b.probabilities, a.probabilities[perm])


def test_rows_and_summary():
    X = single_signal(5, n=100, p=3)
    paths = stability_paths(X, n_subsamples=5, seed=0, names=["a", "b", "c"])
    rows = paths.rows()
    assert rows[0][:2] == ("a", 1) and len(rows) == 9
    s = paths.summary()
    assert s["variables"] == ["a", "b", "c"] and s["n_subsamples"] == 5


@pytest.mark.parametrize("kwargs", [dict(n_subsamples=0), dict(names=["a"])])
def test_validation(kwargs):
    with pytest.raises(ValueError):
        stability_paths(single_signal(0, n=50, p=3), **kwargs)


def test_needs_two_p_rows():
    with pytest.raises(ValueError):
        stability_paths(np.random.default_rng(0).standard_normal((7, 4)))


def test_too_many_failures():
    X = single_signal(0, n=40, p=3)
    X[:, 2] = X[:, 1]           # every subsample is singular
    with pytest.raises(TooManyFailures):
        stability_paths(X, n_subsamples=5)
