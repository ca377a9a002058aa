"""Small dense matrix kernel: eigen/polar decompositions, distances to
rotation orbits SO(n)A, and null spaces.

Every distance here is Frobenius. Functions accept anything ``np.asarray``
understands and never mutate their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyFamily, NonSymmetric, SingularWell

SYM_TOL = 1e-12
DET_TOL = 1e-12
RANK_TOL = 1e-10


@dataclass(frozen=True)
class SymEigen:
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # columns


@dataclass(frozen=True)
class PolarFactors:
    Q: np.ndarray
    S: np.ndarray


def as_square(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    return M


def _fix_signs(V: np.ndarray) -> np.ndarray:
    # largest-magnitude entry of each column made positive
    idx = np.argmax(np.abs(V), axis=0)
    s = np.sign(V[idx, np.arange(V.shape[1])])
    s[s == 0] = 1.0
    return V * s


def sym_eigen(S) -> SymEigen:
    S = as_square(S)
    asym = np.linalg.norm(S - S.T)
    if asym > SYM_TOL * (1.0 + np.linalg.norm(S)):
        raise NonSymmetric(f"asymmetry {asym:.3e} exceeds tolerance")
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    order = np.argsort(-w, kind="stable")
    return SymEigen(w[order], _fix_signs(V[:, order]))


def polar_decompose(M) -> PolarFactors:
    """M = Q S with Q orthogonal and S = sqrt(M^T M)."""
    M = as_square(M)
    U, s, Vt = np.linalg.svd(M)
    Q = U @ Vt
    S = (Vt.T * s) @ Vt
    return PolarFactors(Q, 0.5 * (S + S.T))


def nearest_rotation(G) -> np.ndarray:
    """argmax over Q in SO(n) of tr(Q^T G). Works on stacks (..., n, n)."""
    G = np.asarray(G, dtype=float)
    U, _, Vt = np.linalg.svd(G)
    d = np.atleast_1d(np.sign(np.linalg.det(U @ Vt)))
    d[d == 0] = 1.0
    d = d.reshape(G.shape[:-2])
    U = U.copy()
    U[..., :, -1] *= d[..., None]
    return U @ Vt


def dist_to_well_many(Ms, A) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized Procrustes distance of a stack (..., n, n) to SO(n)A."""
    A = as_square(A)
    if abs(np.linalg.det(A)) <= DET_TOL:
        raise SingularWell(f"|det A| = {abs(np.linalg.det(A)):.3e}")
    Ms = np.asarray(Ms, dtype=float)
    Q = nearest_rotation(Ms @ A.T)
    nearest = Q @ A
    dist = np.sqrt(np.sum((Ms - nearest) ** 2, axis=(-2, -1)))
    return dist, nearest


def dist_to_well(M, A) -> tuple[float, np.ndarray]:
    M = as_square(M)
    d, nearest = dist_to_well_many(M[None], A)
    return float(d[0]), nearest[0]


def dist_to_family_many(Ms, wells: Sequence) -> tuple[np.ndarray, np.ndarray]:
    """Distance to the union of wells and the (smallest) attaining index."""
    if len(wells) == 0:
        raise EmptyFamily("well family is empty")
    Ms = np.asarray(Ms, dtype=float)
    best = None
    idx = None
    for k, A in enumerate(wells):
        d, _ = dist_to_well_many(Ms, A)
        if best is None:
            best, idx = d, np.zeros(d.shape, dtype=int)
        else:
            better = d < best
            best = np.where(better, d, best)
            idx = np.where(better, k, idx)
    return best, idx


def dist_to_family(M, wells: Sequence) -> tuple[float, int, np.ndarray]:
    if len(wells) == 0:
        raise EmptyFamily("well family is empty")
    M = as_square(M)
    best = (np.inf, -1, None)
    for k, A in enumerate(wells):
        d, nearest = dist_to_well(M, A)
        if d < best[0]:
            best = (d, k, nearest)
    return best


def matrix_rank(vectors, tol: float = RANK_TOL) -> int:
    V = np.atleast_2d(np.asarray(vectors, dtype=float))
    if V.size == 0:
        return 0
    s = np.linalg.svd(V, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > tol * s[0]))


def nullspace(vectors, n: int | None = None) -> np.ndarray:
    """Orthonormal basis (rows) of the common orthogonal complement."""
    V = np.asarray(vectors, dtype=float)
    if V.size == 0:
        if n is None:
            raise ValueError("dimension needed for an empty input")
        return np.eye(n)
    V = np.atleast_2d(V)
    n = V.shape[1] if n is None else n
    _, s, Vt = np.linalg.svd(V, full_matrices=True)
    r = int(np.sum(s > RANK_TOL * s[0])) if s.size and s[0] > 0 else 0
    return _fix_signs(Vt[r:].T).T


def random_rotation(rng: np.random.Generator, n: int) -> np.ndarray:
    """Haar-distributed element of SO(n)."""
    Z = rng.standard_normal((n, n))
    Q, R = np.linalg.qr(Z)
    Q = Q * np.sign(np.diag(R))
    if np.linalg.det(Q) < 0:
        Q[:, 0] = -Q[:, 0]
    return Q


def rotation2(theta) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])
