import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sics.errors import DegenerateSpectrum, NearSingular, ShapeMismatch
from sics.ics import fix_signs, ics_solve, transform
from sics.matdecomp import inv_sqrt, sym_eig
from sics.scatter import compute_pair
from sics.simlab import IcModelSpec, generate


def random_spd(rng, p):
    L = rng.standard_normal((p, p))
    return L @ L.T + 0.2 * np.eye(p)


def test_diagonal_s2():
    sol = ics_solve(np.eye(2), np.diag([4.0, 1.0]), 2)
    np.testing.assert_allclose(sol.B, np.eye(2), atol=1e-15)
    np.testing.assert_allclose(sol.eigenvalues, [4.0, 1.0])


def test_diagonal_s1_reorders():
    sol = ics_solve(np.diag([4.0, 1.0]), np.eye(2), 2)
    np.testing.assert_allclose(sol.eigenvalues, [1.0, 0.25])
    np.testing.assert_allclose(sol.B, [[0.0, 0.5], [1.0, 0.0]], atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 7), st.integers(0, 2**31 - 1))
def test_diagonalization_identities(p, seed):
    rng = np.random.default_rng(seed)
    S1, S2 = random_spd(rng, p), random_spd(rng, p)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateSpectrum)
        sol = ics_solve(S1, S2)
    B = sol.B
    np.testing.assert_allclose(B.T @ S1 @ B, np.eye(p), atol=1e-8)
    np.testing.assert_allclose(B.T @ S2 @ B, np.diag(sol.eigenvalues), atol=1e-8 * (1 + sol.eigenvalues[0]))
    np.testing.assert_allclose(B, inv_sqrt(S1) @ sol.A, atol=1e-8)
    assert np.all(np.diff(sol.eigenvalues) <= 0)
    assert np.array_equal(fix_signs(B), B)
    W = inv_sqrt(S1)
    np.testing.assert_allclose(sol.eigenvalues, sym_eig(W @ S2 @ W).eigenvalues, rtol=1e-12)


def test_k_truncates():
    rng = np.random.default_rng(0)
    S1, S2 = random_spd(rng, 5), random_spd(rng, 5)
    full, part = ics_solve(S1, S2), ics_solve(S1, S2, 2)
    np.testing.assert_array_equal(part.B, full.B[:, :2])
    assert part.eigenvalues.shape == (2,)


@pytest.mark.parametrize("k", [0, 4])
def test_bad_k(k):
    with pytest.raises(ValueError):
        ics_solve(np.eye(3), np.eye(3) * 2, k)


def test_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        ics_solve(np.eye(3), np.eye(2))


def test_near_singular_s1():
    with pytest.raises(NearSingular):
        ics_solve(np.diag([1.0, 0.0]), np.eye(2))


def test_degenerate_spectrum_warns():
    with pytest.warns(DegenerateSpectrum):
        sol = ics_solve(np.eye(3), np.diag([3.0, 1.0, 1.0]))
    assert sol.B.shape == (3, 3)


@pytest.mark.parametrize("col, out", [([-1.0, 0.0], [1.0, 0.0]), ([0.0, -2.0], [0.0, 2.0]),
                                      ([0.0, 0.0], [0.0, 0.0]), ([1e-12, -1.0], [-1e-12, 1.0])])
def test_fix_signs_examples(col, out):
    np.testing.assert_array_equal(fix_signs(np.array(col)[:, None])[:, 0], out)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_fix_signs_idempotent(seed):
    B = np.random.default_rng(seed).standard_normal((4, 3))
    B[:, 1] = 0.0
    once = fix_signs(B)
    assert np.array_equal(fix_signs(once), once)
    np.testing.assert_array_equal(np.abs(once), np.abs(B))


def test_transform():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((7, 3))
    np.testing.assert_array_equal(transform(np.eye(3), X), X)
    np.testing.assert_array_equal(transform(np.eye(3)[:, :1], X)[:, 0], X[:, 0])
    B = rng.standard_normal((3, 2))
    naive = np.array([[sum(B[a, j] * X[i, a] for a in range(3)) for j in range(2)]
                      for i in range(7)])
    np.testing.assert_allclose(transform(B, X), naive, atol=1e-14)
    with pytest.raises(ShapeMismatch):
        transform(np.eye(4), X)


def align(est, truth):
    """Rescale and sign-align each unmixing row to the truth."""
    out = np.empty_like(est)
    for j in range(est.shape[0]):
        e = est[j] / np.linalg.norm(est[j])
        t = truth[j] / np.linalg.norm(truth[j])
        out[j] = e if e @ t >= 0 else -e
    return out


def test_equivariance_of_coordinates():
    X, _ = generate(IcModelSpec(p=4, q=2, source_dists=("laplace", "uniform", "gamma(2,1)"),
                                seed=3), 400)
    rng = np.random.default_rng(4)
    M = rng.standard_normal((4, 4)) + 2 * np.eye(4)
    Z1 = transform(ics_solve(*compute_pair(X, "fobi")).B, X)
    Z2 = transform(ics_solve(*compute_pair(X @ M.T, "fobi")).B, X @ M.T)
    signs = np.sign(np.sum(Z1 * Z2, axis=0))
    np.testing.assert_allclose(Z2 * signs, Z1, atol=1e-6 * np.abs(Z1).max())


def test_recovers_ic_model_rows():
    spec = IcModelSpec(p=4, q=2, source_dists=("laplace", "uniform", "gamma(1,1)", "gaussian"),
                       seed=5)
    X, Oinv = generate(spec, 10_000)
    sol = ics_solve(*compute_pair(X, "fobi"))
    est = sol.B.T
    # kurtoses: gamma(1,1) 6 > laplace 3 > gaussian 0 > uniform -1.2
    truth = Oinv[[2, 0, 3, 1]]
    err = np.linalg.norm(align(est, truth) - align(truth, truth), axis=1)
    assert np.all(err < 0.1)
