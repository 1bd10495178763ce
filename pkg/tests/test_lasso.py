import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sics.errors import CountUnreachable, NotSPD
from sics.lasso import (
    PenalizedLsProblem,
    kkt_residual,
    lasso_path,
    objective,
    solve_penalized_ls,
)


def sign_pattern_oracle(G, c, lam):
    """Exhaustive minimizer over all 3^p sign patterns.

    For a fixed pattern s the stationary point of the smooth piece is
    G_A b_A = c_A - lam/2 s_A; it is kept only if its signs match s.
    """
    p = c.size
    best = (objective(G, c, np.zeros(p), lam), np.zeros(p))
    for pattern in itertools.product((-1, 0, 1), repeat=p):
        s = np.array(pattern, dtype=float)
        idx = np.flatnonzero(s)
        if idx.size == 0:
            continue
        b = np.zeros(p)
        b[idx] = np.linalg.solve(G[np.ix_(idx, idx)], c[idx] - 0.5 * lam * s[idx])
        if np.any(np.sign(b[idx]) != s[idx]):
            continue
        f = objective(G, c, b, lam)
        if f < best[0]:
            best = (f, b)
    return best


def random_problem(rng, p):
    L = rng.standard_normal((p + 3, p))
    G = L.T @ L / (p + 3) + 0.05 * np.eye(p)
    c = rng.standard_normal(p)
    return G, c


def test_one_dimensional_soft_threshold():
    sol = solve_penalized_ls(PenalizedLsProblem(np.eye(1), np.ones(1), lam=1.0))
    assert sol.beta[0] == pytest.approx(0.5, abs=1e-12)


def test_zero_penalty_is_least_squares():
    rng = np.random.default_rng(1)
    G, c = random_problem(rng, 6)
    sol = solve_penalized_ls(PenalizedLsProblem(G, c, lam=0.0))
    np.testing.assert_allclose(sol.beta, np.linalg.solve(G, c), atol=1e-10)


def test_penalty_above_lam_max_gives_zero():
    rng = np.random.default_rng(2)
    G, c = random_problem(rng, 4)
    lam = 2.0 * np.abs(c).max()
    sol = solve_penalized_ls(PenalizedLsProblem(G, c, lam=lam))
    assert np.all(sol.beta == 0)
    sol = solve_penalized_ls(PenalizedLsProblem(G, c, lam=lam * 0.999))
    assert np.count_nonzero(sol.beta) == 1


@pytest.mark.parametrize("seed", range(40))
def test_matches_sign_pattern_oracle(seed):
    rng = np.random.default_rng(seed)
    p = int(rng.integers(1, 6))
    G, c = random_problem(rng, p)
    lam = float(rng.uniform(0, 2.2) * np.abs(c).max())
    sol = solve_penalized_ls(PenalizedLsProblem(G, c, lam=lam))
    f_star, _ = sign_pattern_oracle(G, c, lam)
    assert sol.objective <= f_star + 1e-8
    assert sol.kkt_residual <= 1e-8


@pytest.mark.parametrize("seed", range(20))
def test_count_mode(seed):
    rng = np.random.default_rng(100 + seed)
    p = int(rng.integers(2, 9))
    G, c = random_problem(rng, p)
    for r in range(1, p + 1):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            sol = solve_penalized_ls(PenalizedLsProblem(G, c, count=r))
        assert sol.kkt_residual <= 1e-8
        skipped = any(issubclass(w.category, CountUnreachable) for w in caught)
        if skipped:
            assert not sol.count_reached and sol.active_count < r
        else:
            assert sol.active_count == r
        # the count-mode point solves the penalty-mode problem at its own lambda
        again = solve_penalized_ls(PenalizedLsProblem(G, c, lam=sol.lambda_effective))
        assert again.objective == pytest.approx(sol.objective, abs=1e-8 * (1 + abs(sol.objective)))


def test_count_p_is_unpenalized():
    rng = np.random.default_rng(7)
    G, c = random_problem(rng, 5)
    sol = solve_penalized_ls(PenalizedLsProblem(G, c, count=5))
    assert sol.lambda_effective == 0.0
    np.testing.assert_allclose(sol.beta, np.linalg.solve(G, c), atol=1e-8)


def test_tied_entries_join_together():
    # symmetric problem: both coordinates hit lam_max at once
    G = np.eye(2)
    c = np.array([1.0, -1.0])
    with pytest.warns(CountUnreachable):
        sol = solve_penalized_ls(PenalizedLsProblem(G, c, count=1))
    assert sol.active_count == 0 and not sol.count_reached
    sol = solve_penalized_ls(PenalizedLsProblem(G, c, lam=1.0))
    np.testing.assert_allclose(sol.beta, [0.5, -0.5])


def test_active_count_monotone_along_lambda():
    rng = np.random.default_rng(3)
    G, c = random_problem(rng, 7)
    lam_max = 2 * np.abs(c).max()
    counts = [solve_penalized_ls(PenalizedLsProblem(G, c, lam=lam)).active_count
              for lam in np.linspace(lam_max, 0, 60)]
    # with an orthogonal-ish design drops are rare; weak monotonicity of the
    # path endpoints is what we can assert: the dense end has every variable
    assert counts[0] == 0 and counts[-1] == 7


def test_path_knots_satisfy_kkt():
    rng = np.random.default_rng(4)
    G, c = random_problem(rng, 8)
    for knot in lasso_path(G, c):
        assert kkt_residual(G, c, knot.beta, 2 * knot.gamma) <= 1e-8


def test_not_spd():
    with pytest.raises(NotSPD):
        solve_penalized_ls(PenalizedLsProblem(-np.eye(2), np.ones(2), lam=1.0))
    with pytest.raises(NotSPD):
        solve_penalized_ls(PenalizedLsProblem(np.array([[1.0, 2.0], [0.0, 1.0]]),
                                              np.ones(2), lam=1.0))


def test_problem_validation():
    with pytest.raises(ValueError):
        PenalizedLsProblem(np.eye(2), np.ones(2))
    with pytest.raises(ValueError):
        PenalizedLsProblem(np.eye(2), np.ones(2), lam=1.0, count=1)
    with pytest.raises(ValueError):
        PenalizedLsProblem(np.eye(2), np.ones(2), count=3)
    with pytest.raises(ValueError):
        PenalizedLsProblem(np.eye(2), np.ones(3), lam=1.0)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), frac=st.floats(0.0, 1.0))
def test_objective_bounds(seed, frac):
    rng = np.random.default_rng(seed)
    G, c = random_problem(rng, 6)
    lam = frac * 2 * np.abs(c).max()
    sol = solve_penalized_ls(PenalizedLsProblem(G, c, lam=lam))
    b_ls = np.linalg.solve(G, c)
    assert sol.kkt_residual <= 1e-8
    assert sol.objective <= objective(G, c, np.zeros(6), lam) + 1e-10
    assert sol.objective <= objective(G, c, b_ls, lam) + 1e-10
