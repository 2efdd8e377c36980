"""Closed-form ideal reaction force of an affinely constrained system.

For a frame at configuration q and a velocity v on the constraint fiber,
the constraint exerts the unique ideal reaction

    R = S^T lam,   lam = (S Ainv S^T)^-1 (S Ainv ell - sigma),

where

    ell_i   = (dA_ij/dq_h - 1/2 dA_jh/dq_i) v_j v_h
              + (db_j/dq_i - db_i/dq_j) v_j + dV/dq_i
    sigma_a = dS_ai/dq_j v_i v_j + ds_a/dq_j v_j.

``lam`` is the Lagrange multiplier of the constrained Lagrange equations
``A qdd + ell = S^T lam``; R annihilates ker S (ideality) and, restricted
to the fiber, each component of R is a quadratic polynomial in the r
kernel coordinates of v.

The helpers here are pure functions of (frame, v): nothing is cached and
concurrent batch evaluation is safe.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import gram_solve, null_space_basis
from .model import DEFAULT_CONSTRAINT_TOL, EvaluatedFrame

__all__ = [
    "ConstraintResidualError",
    "ReactionSample",
    "ell",
    "sigma",
    "multiplier",
    "reaction_force",
    "projector_Dcirc",
    "projector_D",
    "xi",
    "kernel_basis",
]


class ConstraintResidualError(ValueError):
    """Velocity handed to an on-fiber operation violates S v + s = 0."""


def _check_on_fiber(f: EvaluatedFrame, v: np.ndarray, tol: float | None):
    if tol is None:
        return
    resid = float(np.max(np.abs(f.S @ v + f.s)))
    if resid > tol:
        raise ConstraintResidualError(
            f"velocity is off the constraint fiber: |S v + s| = {resid:.3e} > {tol:.1e} "
            f"at q={f.q.tolist()} (project it first)"
        )


def ell(f: EvaluatedFrame, v: np.ndarray) -> np.ndarray:
    """Velocity-dependent left-hand side of the Lagrange equations.

    Defined for every v, constrained or not.  With constant A, b and flat
    V this is identically zero.
    """
    v = np.asarray(v, dtype=float)
    out = f.Vp.copy()
    if f.dA.any():
        out += np.einsum("ijh,j,h->i", f.dA, v, v) - 0.5 * np.einsum("jhi,j,h->i", f.dA, v, v)
    if f.db.any():
        out += (f.db.T - f.db) @ v
    return out


def sigma(f: EvaluatedFrame, v: np.ndarray) -> np.ndarray:
    """Time derivative of the constraint residual along (q, v).

    Equals d/dt [S(q) qdot + s(q)] evaluated with qdot = v and qddot = 0;
    zero whenever S and s are constant.
    """
    v = np.asarray(v, dtype=float)
    out = f.ds @ v
    if f.dS.any():
        out += np.einsum("aij,i,j->a", f.dS, v, v)
    return out


def multiplier(f: EvaluatedFrame, v: np.ndarray,
               constraint_tol: float | None = DEFAULT_CONSTRAINT_TOL) -> np.ndarray:
    """Lagrange multiplier lam with R = S^T lam.

    Requires v on the fiber to ``constraint_tol`` (pass None to skip the
    check, e.g. for integrator substeps that extend the field off the
    fiber).  Raises :class:`RankDropError` when S Ainv S^T is singular.
    """
    v = np.asarray(v, dtype=float)
    _check_on_fiber(f, v, constraint_tol)
    G = f.S @ f.Ainv @ f.S.T
    rhs = f.S @ (f.Ainv @ ell(f, v)) - sigma(f, v)
    return gram_solve(G, rhs, q=f.q)


@dataclass
class ReactionSample:
    """Reaction covector R = S^T lambda at one constrained state."""

    q: np.ndarray
    v: np.ndarray
    R: np.ndarray
    lam: np.ndarray


def reaction_force(f: EvaluatedFrame, v: np.ndarray,
                   constraint_tol: float | None = DEFAULT_CONSTRAINT_TOL) -> ReactionSample:
    """Ideal reaction force at the constrained state (f.q, v)."""
    v = np.asarray(v, dtype=float)
    lam = multiplier(f, v, constraint_tol)
    return ReactionSample(q=f.q.copy(), v=v.copy(), R=f.S.T @ lam, lam=lam)


def projector_Dcirc(f: EvaluatedFrame) -> np.ndarray:
    """Ainv-orthogonal projector of covectors onto range S^T.

    P = S^T (S Ainv S^T)^-1 S Ainv; idempotent, fixes range S^T, and
    P A u = 0 for every u in ker S.
    """
    G = f.S @ f.Ainv @ f.S.T
    return f.S.T @ gram_solve(G, f.S @ f.Ainv, q=f.q)


def projector_D(f: EvaluatedFrame) -> np.ndarray:
    """A-orthogonal projector of vectors onto ker S (complement of range Ainv S^T)."""
    G = f.S @ f.Ainv @ f.S.T
    return np.eye(f.q.size) - f.Ainv @ (f.S.T @ gram_solve(G, f.S, q=f.q))


def xi(f: EvaluatedFrame) -> np.ndarray:
    """Canonical nonhomogeneous term: the solution of S xi = -s that is
    A-orthogonal to ker S.

    Any other valid choice differs by a kernel vector, which every
    downstream conservation test is insensitive to.
    """
    G = f.S @ f.Ainv @ f.S.T
    return -f.Ainv @ (f.S.T @ gram_solve(G, f.s, q=f.q))


def kernel_basis(f: EvaluatedFrame) -> np.ndarray:
    """Orthonormal basis of ker S(q) as columns, shape (n, r)."""
    return null_space_basis(f.S, q=f.q)
