"""Invariant coordinate selection by joint diagonalization of two scatters."""

from dataclasses import dataclass
import warnings

import numpy as np

from .errors import DegenerateSpectrum, ShapeMismatch
from .matdecomp import inv_sqrt, sym_eig

SIGN_TOL = 1e-10


@dataclass(frozen=True)
class IcsSolution:
    """Unmixing columns ``B``, orthonormal ``A`` and generalized kurtoses.

    ``B = S1^{-1/2} A``; ``B' S1 B = I`` and ``B' S2 B = diag(eigenvalues)``.
    """

    B: np.ndarray
    A: np.ndarray
    eigenvalues: np.ndarray

    def to_dict(self):
        return {"B": self.B.tolist(), "A": self.A.tolist(),
                "eigenvalues": self.eigenvalues.tolist()}


def as_matrix(S):
    """Accept a ``ScatterEstimate`` or a bare array."""
    return np.asarray(getattr(S, "matrix", S), dtype=float)


def fix_signs(B):
    """Flip columns so that the first entry with magnitude > 1e-10 is positive.

    All-zero columns are left alone; the operation is idempotent.
    """
    B = np.array(B, dtype=float, copy=True)
    if B.ndim == 1:
        return fix_signs(B[:, None])[:, 0]
    for j in range(B.shape[1]):
        nz = np.flatnonzero(np.abs(B[:, j]) > SIGN_TOL)
        if nz.size and B[nz[0], j] < 0:
            B[:, j] = -B[:, j]
    return B


def _column_signs(B):
    signs = np.ones(B.shape[1])
    for j in range(B.shape[1]):
        nz = np.flatnonzero(np.abs(B[:, j]) > SIGN_TOL)
        if nz.size and B[nz[0], j] < 0:
            signs[j] = -1.0
    return signs


def whitened_s2(S1, S2):
    """Return ``(W, W S2 W)`` with ``W = S1^{-1/2}``."""
    W = inv_sqrt(as_matrix(S1))
    M = W @ as_matrix(S2) @ W
    return W, 0.5 * (M + M.T)


def ics_solve(S1, S2, k=None):
    """Joint diagonalization of ``S1`` and ``S2``.

    Parameters
    ----------
    S1, S2 : ScatterEstimate or (p, p) array
    k : int, optional
        Number of invariant coordinates to keep (default ``p``).

    Returns
    -------
    IcsSolution
        The first ``k`` columns in order of decreasing generalized kurtosis,
        with the ``fix_signs`` convention applied to ``B`` (and matching
        flips of ``A``).
    """
    S1m, S2m = as_matrix(S1), as_matrix(S2)
    if S1m.shape != S2m.shape or S1m.ndim != 2 or S1m.shape[0] != S1m.shape[1]:
        raise ShapeMismatch("scatter matrices must be square and of equal size")
    p = S1m.shape[0]
    k = p if k is None else int(k)
    if not 1 <= k <= p:
        raise ValueError(f"k must lie in 1..{p}")
    W, M = whitened_s2(S1m, S2m)
    eig = sym_eig(M)
    rho = eig.eigenvalues
    scale = max(1.0, abs(rho[0]))
    gaps = -np.diff(rho[:min(k + 1, p)])
    if gaps.size and gaps.min() < 1e-10 * scale:
        warnings.warn("generalized kurtoses are not distinct; components are "
                      "not identifiable", DegenerateSpectrum, stacklevel=2)
    A = eig.eigenvectors[:, :k]
    B = W @ A
    signs = _column_signs(B)
    return IcsSolution(B * signs, A * signs, rho[:k].copy())


def transform(B, X):
    """Invariant coordinates ``X @ B`` (row i is ``B' x_i``), no centring."""
    B = np.asarray(B, dtype=float)
    X = np.asarray(X, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    if X.ndim != 2 or X.shape[1] != B.shape[0]:
        raise ShapeMismatch(f"data with {X.shape[-1]} columns cannot be mapped by "
                            f"a {B.shape[0]}-row unmixing matrix")
    return X @ B
