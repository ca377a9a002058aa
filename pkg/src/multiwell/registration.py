"""Affine recovery from approximately preserved distances.

Given simplex vertices z_0..z_n in the unit ball and images zeta_i with
||zeta_i - zeta_j| - |A(z_i - z_j)|| <= eps, build l(z) = O z + t with
O in O(n)A and max_i |zeta_i - l(z_i)| = O(eps).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.optimize import linprog

from . import linalg_core as lc
from .errors import DegenerateSimplex, SingularSystem
from .parallel import stream

MIN_INRADIUS = 1e-6


def facets(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Outward unit normals N (rows) and offsets c with conv(z) = {N y <= c}."""
    z = np.asarray(z, dtype=float)
    k, n = z.shape
    N = np.empty((k, n))
    c = np.empty(k)
    for i in range(k):
        rest = np.delete(z, i, axis=0)
        basis = lc.nullspace(rest[1:] - rest[0], n=n)
        if basis.shape[0] != 1:
            raise DegenerateSimplex("vertices are affinely dependent")
        nu = basis[0]
        off = nu @ rest[0]
        if nu @ z[i] > off:
            nu, off = -nu, -off
        N[i], c[i] = nu, off
    return N, c


def inscribed_ball(z) -> tuple[np.ndarray, float]:
    """Center and radius of the largest ball in conv(z), by linear programming."""
    z = np.asarray(z, dtype=float)
    k, n = z.shape
    if k != n + 1:
        raise DegenerateSimplex(f"need {n + 1} vertices, got {k}")
    try:
        N, c = facets(z)
    except DegenerateSimplex:
        return z.mean(axis=0), 0.0
    cost = np.zeros(n + 1)
    cost[-1] = -1.0
    A_ub = np.hstack([N, np.ones((k, 1))])
    res = linprog(cost, A_ub=A_ub, b_ub=c, bounds=[(None, None)] * n + [(0, None)], method="highs")
    if res.status != 0:
        return z.mean(axis=0), 0.0
    return res.x[:n], float(res.x[-1])


@dataclass(frozen=True)
class AffineMap:
    O: np.ndarray
    t: np.ndarray

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return x @ self.O.T + self.t

    def to_json(self) -> dict:
        return {"O": self.O.reshape(-1).tolist(), "t": self.t.tolist()}


@dataclass(frozen=True)
class PointCorrespondence:
    z: np.ndarray
    zeta: np.ndarray
    A: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        zeta = np.asarray(self.zeta, dtype=float)
        A = lc.as_square(self.A)
        n = A.shape[0]
        if z.shape != (n + 1, n) or zeta.shape != (n + 1, n):
            raise ValueError(f"expected {n + 1} points in R^{n}")
        if np.any(np.linalg.norm(z, axis=1) > 1.0 + 1e-12):
            raise ValueError("source points must lie in the unit ball")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "zeta", zeta)
        object.__setattr__(self, "A", A)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @cached_property
    def b(self) -> float:
        return inscribed_ball(self.z)[1]

    @property
    def distortion(self) -> float:
        dz = (self.z[:, None, :] - self.z[None, :, :]) @ self.A.T
        dzeta = self.zeta[:, None, :] - self.zeta[None, :, :]
        return float(np.max(np.abs(np.linalg.norm(dzeta, axis=-1) - np.linalg.norm(dz, axis=-1))))

    @classmethod
    def from_json(cls, obj: dict) -> "PointCorrespondence":
        n = int(obj["n"])
        return cls(
            np.asarray(obj["z"], dtype=float),
            np.asarray(obj["zeta"], dtype=float),
            np.asarray(obj["A"], dtype=float).reshape(n, n),
        )

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "A": self.A.reshape(-1).tolist(),
            "z": self.z.tolist(),
            "zeta": self.zeta.tolist(),
        }

    __hash__ = object.__hash__
    __eq__ = object.__eq__


def gram_schmidt(M: np.ndarray) -> np.ndarray:
    """Orthonormalize the columns of M in index order."""
    M = np.asarray(M, dtype=float)
    out = np.zeros_like(M)
    for k in range(M.shape[1]):
        v = M[:, k].copy()
        for _ in range(2):  # second pass for stability
            v -= out[:, :k] @ (out[:, :k].T @ v)
        nrm = np.linalg.norm(v)
        if nrm <= 1e-14:
            raise SingularSystem("columns are linearly dependent")
        out[:, k] = v / nrm
    return out


def recover_orthogonal_affine(pc: PointCorrespondence) -> tuple[AffineMap, float]:
    if pc.b <= MIN_INRADIUS:
        raise DegenerateSimplex(f"inradius {pc.b:.3e} too small")
    z0, w0 = pc.z[0], pc.zeta[0]
    Zt = (pc.z[1:] - z0) @ pc.A.T  # rows A(z_i - z_0)
    Wt = pc.zeta[1:] - w0
    if lc.matrix_rank(Zt, tol=1e-12) < pc.n:
        raise SingularSystem("transformed vertices are dependent")
    # O_tilde Zt^T = Wt^T
    Ot = np.linalg.solve(Zt, Wt).T
    Oprime = gram_schmidt(Ot)
    O = Oprime @ pc.A
    lmap = AffineMap(O, w0 - O @ z0)
    residual = float(np.max(np.linalg.norm(pc.zeta - lmap(pc.z), axis=1)))
    return lmap, residual


def extend_to_point(pc: PointCorrespondence, lmap: AffineMap, z, zeta) -> float:
    return float(np.linalg.norm(np.asarray(zeta, dtype=float) - lmap(np.asarray(z, dtype=float))))


def barycentric_coefficients(z, v) -> np.ndarray:
    """gamma with sum_i gamma_i (z_i - z_0) = v, i = 1..n."""
    z = np.asarray(z, dtype=float)
    D = (z[1:] - z[0]).T
    return np.linalg.solve(D, np.asarray(v, dtype=float).T)


def origin_inradius(z) -> float:
    """Radius of the largest origin-centred ball inside conv(z); <= 0 if 0 is outside."""
    N, c = facets(np.asarray(z, dtype=float))
    return float(np.min(c))


class PolarChecker:
    """Samples the polar body {x : x.z_i <= 1} and checks |x| <= n/b."""

    def __init__(self, z: np.ndarray, b: float):
        self.z = z
        self.b = b
        self.n = z.shape[1]
        self.radius = self.n / b

    def sample(self, seed: int = 0, n_samples: int = 10000, batch: int = 200000, max_batches: int = 200) -> np.ndarray:
        n = self.n
        R = 2.0 * n / self.b
        got = []
        have = 0
        for k in range(max_batches):
            rng = stream(seed, 9100, k)
            g = rng.standard_normal((batch, n))
            g /= np.linalg.norm(g, axis=1, keepdims=True)
            r = R * rng.uniform(size=batch) ** (1.0 / n)
            x = g * r[:, None]
            ok = np.max(x @ self.z.T, axis=1) <= 1.0
            got.append(x[ok])
            have += int(ok.sum())
            if have >= n_samples:
                break
        return np.concatenate(got)[:n_samples]

    def __call__(self, seed: int = 0, n_samples: int = 10000) -> float:
        """Largest sampled |x|; raises AssertionError if the bound is broken."""
        xs = self.sample(seed, n_samples)
        worst = float(np.max(np.linalg.norm(xs, axis=1))) if xs.size else 0.0
        assert worst <= self.radius + 1e-9, f"|x| = {worst} exceeds {self.radius}"
        return worst


def polar_radius_bound(z, b: float) -> tuple[float, PolarChecker]:
    z = np.asarray(z, dtype=float)
    if b <= MIN_INRADIUS:
        raise DegenerateSimplex(f"inradius {b:.3e} too small")
    try:
        r0 = origin_inradius(z)
    except DegenerateSimplex:
        raise
    if r0 < b - 1e-12:
        raise DegenerateSimplex(f"B_{b} about the origin is not inside the hull (clearance {r0:.3e})")
    chk = PolarChecker(z, b)
    return chk.radius, chk


def regular_simplex(n: int, radius: float = 1.0) -> np.ndarray:
    """n+1 vertices on the sphere of given radius, centred at 0."""
    E = np.eye(n + 1) - 1.0 / (n + 1)
    U, _, _ = np.linalg.svd(E)
    pts = E @ U[:, :n]
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    return radius * pts
