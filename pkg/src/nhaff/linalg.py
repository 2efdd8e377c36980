"""Dense linear-algebra helpers shared by the model/reaction layers.

Everything here operates on small matrices (n is the configuration
dimension, k the number of constraint rows; typically n <= 6, k <= 3),
so clarity beats asymptotics.
"""

from __future__ import annotations

import numpy as np

__all__ = ["RankDropError", "gram_solve", "null_space_basis", "row_space_split"]

#: Relative singularity threshold for Gram-matrix solves (times the
#: largest diagonal entry).
GRAM_SINGULARITY_RTOL = 1e-12


class RankDropError(RuntimeError):
    """A constraint-rank assumption failed at some configuration."""

    def __init__(self, message: str, q=None):
        if q is not None:
            message = f"{message} at q={np.asarray(q).tolist()}"
        super().__init__(message)
        self.q = None if q is None else np.asarray(q, dtype=float)


def gram_solve(G: np.ndarray, rhs: np.ndarray, q=None) -> np.ndarray:
    """Solve ``G x = rhs`` for the symmetric Gram matrix ``G = S A^-1 S^T``.

    Uses Cholesky when ``G`` is numerically SPD and falls back to an SVD
    solve otherwise; raises :class:`RankDropError` when the smallest
    singular value is below ``1e-12`` times the largest diagonal entry.
    """
    G = np.asarray(G, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    if G.shape == (1, 1) and G[0, 0] > 0.0:
        return rhs / G[0, 0]
    dmax = float(np.max(np.abs(np.diag(G)))) if G.size else 0.0
    try:
        np.linalg.cholesky(G)
    except np.linalg.LinAlgError:
        u, sv, vt = np.linalg.svd(G)
        if sv.size == 0 or sv[-1] <= GRAM_SINGULARITY_RTOL * dmax:
            raise RankDropError("singular constraint Gram matrix S*Ainv*S^T", q) from None
        y = u.T @ rhs
        y = y / sv if y.ndim == 1 else y / sv[:, None]
        return vt.T @ y
    return np.linalg.solve(G, rhs)


def null_space_basis(S: np.ndarray, q=None) -> np.ndarray:
    """Orthonormal (Euclidean) basis of ``ker S`` as columns, shape (n, n-k).

    Raises :class:`RankDropError` if ``S`` does not have full row rank.
    """
    S = np.asarray(S, dtype=float)
    k, n = S.shape
    _, sv, vt = np.linalg.svd(S, full_matrices=True)
    tol = max(k, n) * np.finfo(float).eps * (sv[0] if sv.size else 0.0)
    rank = int(np.sum(sv > tol))
    if rank < k:
        raise RankDropError(f"constraint matrix has rank {rank} < k={k}", q)
    return vt[k:].T.copy()


def row_space_split(M: np.ndarray, rtol: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split R^n into the row space of ``M`` and its orthogonal complement.

    Returns ``(span, annihilator, singular_values)`` where ``span`` is an
    (n, d) orthonormal basis of the row space (rank ``d`` detected with
    the relative threshold ``rtol``) and ``annihilator`` an (n, n-d)
    orthonormal basis of its complement.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    _, sv, vt = np.linalg.svd(M, full_matrices=True)
    d = int(np.sum(sv > rtol * sv[0])) if sv.size and sv[0] > 0.0 else 0
    return vt[:d].T.copy(), vt[d:].T.copy(), sv
