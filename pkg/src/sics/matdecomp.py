"""Symmetric eigendecompositions, inverse square roots and Procrustes rotations.

Everything here is deterministic: LAPACK ``eigh``/``svd`` followed by fixed
ordering and sign conventions, so identical input bits give identical output.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NearSingular, NotSymmetric, RankDeficient

SYMMETRY_RTOL = 1e-10
TIE_RTOL = 1e-12


@dataclass(frozen=True)
class SymEig:
    """Eigenvalues in non-increasing order and matching orthonormal columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self):
        V = self.eigenvectors
        return (V * self.eigenvalues) @ V.T


def _check_symmetric(M):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise NotSymmetric(f"expected a square matrix, got shape {M.shape}")
    scale = max(1.0, np.abs(M).max()) if M.size else 1.0
    if np.abs(M - M.T).max(initial=0.0) > SYMMETRY_RTOL * scale:
        raise NotSymmetric("matrix is not symmetric within tolerance")
    return M


def fix_eigvec_signs(V):
    """Make the largest-magnitude entry of each column positive.

    Entries within ``TIE_RTOL`` of the column maximum count as tied and the
    lowest index wins, so (-1, 1)/sqrt(2) becomes (1, -1)/sqrt(2).
    """
    V = np.array(V, dtype=float, copy=True)
    mags = np.abs(V)
    for j in range(V.shape[1]):
        col = mags[:, j]
        top = col.max(initial=0.0)
        if top == 0.0:
            continue
        lead = np.flatnonzero(col >= top * (1.0 - TIE_RTOL))[0]
        if V[lead, j] < 0:
            V[:, j] = -V[:, j]
    return V


def _descending_order(values):
    # eigh returns ascending values; reverse into descending while keeping
    # near-equal values in their original (eigh) index order.
    order = list(np.argsort(-values, kind="stable"))
    scale = max(1.0, np.abs(values).max(initial=0.0))
    out = []
    i = 0
    while i < len(order):
        j = i + 1
        while j < len(order) and values[order[i]] - values[order[j]] <= TIE_RTOL * scale:
            j += 1
        out.extend(sorted(order[i:j]))
        i = j
    return np.array(out, dtype=int)


def sym_eig(M):
    """Eigendecomposition of a symmetric matrix.

    Parameters
    ----------
    M : (p, p) array_like
        Symmetric matrix (checked to 1e-10 relative).

    Returns
    -------
    SymEig
        Eigenvalues sorted non-increasing; eigenvectors with their
        largest-magnitude entry positive.
    """
    M = _check_symmetric(M)
    M = 0.5 * (M + M.T)
    values, vectors = np.linalg.eigh(M)
    order = _descending_order(values)
    return SymEig(values[order], fix_eigvec_signs(vectors[:, order]))


def _spd_eig(M, what):
    eig = sym_eig(M)
    lam = eig.eigenvalues
    if lam.size and (lam[-1] <= TIE_RTOL * lam[0] or lam[0] <= 0):
        raise NearSingular(f"{what}: smallest eigenvalue {lam[-1]:.3g} is not "
                           f"resolvable against largest {lam[0]:.3g}")
    return eig


def inv_sqrt(M):
    """Symmetric positive definite inverse square root ``M^{-1/2}``."""
    eig = _spd_eig(M, "inv_sqrt")
    V = eig.eigenvectors
    R = (V / np.sqrt(eig.eigenvalues)) @ V.T
    return 0.5 * (R + R.T)


def sqrtm_spd(M):
    """Symmetric positive definite square root ``M^{1/2}``."""
    eig = _spd_eig(M, "sqrtm_spd")
    V = eig.eigenvectors
    R = (V * np.sqrt(eig.eigenvalues)) @ V.T
    return 0.5 * (R + R.T)


def procrustes(T):
    """Reduced-rank Procrustes rotation.

    Returns ``U @ Vt`` from the thin SVD ``T = U D Vt``; this is the
    matrix with orthonormal columns maximizing ``trace(A.T @ T)``.

    Raises
    ------
    RankDeficient
        If a singular value falls below 1e-12 times the largest.
    """
    T = np.asarray(T, dtype=float)
    if T.ndim != 2:
        raise ValueError("procrustes expects a 2-D array")
    U, d, Vt = np.linalg.svd(T, full_matrices=False)
    if d.size == 0 or d[-1] < 1e-12 * d[0] or d[0] == 0.0:
        raise RankDeficient("target matrix has collapsed columns")
    return U @ Vt
