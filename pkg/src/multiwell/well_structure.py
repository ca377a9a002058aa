"""Algebra of finite well families K = union of SO(n)A_i.

Rank-one compatibility between wells, the compatibility graph and its
spanning tree, the genericity condition on connection vectors, and two
independent routes to a direction v with |A_i v| > |A_j v| for all j != i:
a constructive one that walks the spanning tree, and a sampled search.

Well indices are 0-based throughout.
"""

from __future__ import annotations

import itertools
import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from . import linalg_core as lc
from .errors import (
    DegenerateSpectrum,
    EmptyFamily,
    MarginNonPositive,
    NoConstantsFound,
    NonPositiveWell,
    NotConnected,
    NotGeneric,
)
from .parallel import stream

CERT_TOL = 1e-9


@dataclass(frozen=True)
class WellFamily:
    wells: tuple

    def __init__(self, wells: Sequence):
        ws = tuple(lc.as_square(A).copy() for A in wells)
        if not ws:
            raise EmptyFamily("a well family needs at least one well")
        n = ws[0].shape[0]
        if not 2 <= n <= 4:
            raise ValueError(f"dimension {n} outside 2..4")
        for A in ws:
            if A.shape != (n, n):
                raise ValueError("wells of mixed dimension")
            if abs(np.linalg.det(A)) <= lc.DET_TOL:
                raise lc.SingularWell("well with vanishing determinant")
        for A in ws:
            A.setflags(write=False)
        object.__setattr__(self, "wells", ws)

    @property
    def n(self) -> int:
        return self.wells[0].shape[0]

    @property
    def m(self) -> int:
        return len(self.wells)

    def __len__(self):
        return len(self.wells)

    def __getitem__(self, k):
        return self.wells[k]

    def __iter__(self):
        return iter(self.wells)

    @cached_property
    def sigma(self) -> float:
        return sigma_margin(self)

    def to_json(self) -> dict:
        return {"n": self.n, "wells": [A.reshape(-1).tolist() for A in self.wells]}

    @classmethod
    def from_json(cls, obj: dict) -> "WellFamily":
        n = int(obj["n"])
        return cls([np.asarray(w, dtype=float).reshape(n, n) for w in obj["wells"]])

    # hashing by identity keeps cached_property usable on a frozen dataclass
    __hash__ = object.__hash__
    __eq__ = object.__eq__


@dataclass(frozen=True)
class Rank1Connection:
    i: int
    j: int
    p: np.ndarray
    q: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    a: np.ndarray
    b: np.ndarray

    def to_json(self) -> dict:
        return {
            "i": self.i,
            "j": self.j,
            "p": self.p.tolist(),
            "q": self.q.tolist(),
            "witness_X": self.X.reshape(-1).tolist(),
            "witness_Y": self.Y.reshape(-1).tolist(),
            "a": self.a.tolist(),
            "b": self.b.tolist(),
        }


@dataclass(frozen=True)
class Direction:
    """Unit vector v with a strict margin; ``v is None`` when there is no competitor."""

    v: Optional[np.ndarray]
    margin: float

    @property
    def absent_competitor(self) -> bool:
        return self.v is None

    def to_json(self) -> dict:
        if self.v is None:
            return {"absent_competitor": True, "v": None, "margin": None}
        return {"absent_competitor": False, "v": self.v.tolist(), "margin": self.margin}


ABSENT = Direction(None, math.inf)


@dataclass
class CompatibilityReport:
    m: int
    n: int
    edges: list
    connected: bool
    spanning_tree: list = field(default_factory=list)
    generic: Optional[bool] = None
    constructive: Optional[list] = None
    directions_h1: list = field(default_factory=list)
    directions_h2: list = field(default_factory=list)
    exact_h1: Optional[list] = None
    exact_h2: Optional[list] = None
    dichotomy_ok: Optional[bool] = None
    sigma: float = float("nan")

    def to_json(self) -> dict:
        def dirs(lst):
            return None if lst is None else [None if d is None else d.to_json() for d in lst]

        return {
            "m": self.m,
            "n": self.n,
            "sigma": self.sigma,
            "edges": [e.to_json() for e in self.edges],
            "connected": self.connected,
            "spanning_tree": [list(t) for t in self.spanning_tree],
            "generic": self.generic,
            "constructive": dirs(self.constructive),
            "directions_h1": dirs(self.directions_h1),
            "directions_h2": dirs(self.directions_h2),
            "exact_h1": dirs(self.exact_h1),
            "exact_h2": dirs(self.exact_h2),
            "dichotomy_ok": self.dichotomy_ok,
        }


def _check_positive(*mats):
    for M in mats:
        if np.linalg.det(M) <= lc.DET_TOL:
            raise NonPositiveWell("well determinant must be positive")


def rank1_connect(A, B):
    """Vectors (p, q), p.q = 0, with A^TA - B^TB = pp^T - qq^T, or None.

    Returns zero vectors for coincident wells.
    """
    A = lc.as_square(A)
    B = lc.as_square(B)
    _check_positive(A, B)
    n = A.shape[0]
    S = A.T @ A - B.T @ B
    S = 0.5 * (S + S.T)
    tol = 1e-9 * (1.0 + np.linalg.norm(S))
    if np.linalg.norm(S) <= tol:
        return np.zeros(n), np.zeros(n)
    eig = lc.sym_eigen(S)
    lam, V = eig.eigenvalues, eig.eigenvectors
    if lam[1] > tol or lam[n - 2] < -tol:
        return None
    p = math.sqrt(max(lam[0], 0.0)) * V[:, 0]
    q = math.sqrt(max(-lam[-1], 0.0)) * V[:, -1]
    return p, q


def _complete_frame(W: np.ndarray) -> np.ndarray:
    """Unit vector orthogonal to the n-1 orthonormal columns of W."""
    basis = lc.nullspace(W.T, n=W.shape[0])
    return basis[0]


def rank1_witness(A, B):
    """Matrices X in SO(n)A, Y in SO(n)B and vectors a, b with X - Y = a b^T."""
    A = lc.as_square(A)
    B = lc.as_square(B)
    conn = rank1_connect(A, B)
    if conn is None:
        raise NotConnected("wells are not rank-one connected")
    p, q = conn
    if not (np.any(p) or np.any(q)):
        raise NotConnected("coincident wells carry no rank-one connection")
    n = A.shape[0]
    Binv = np.linalg.inv(B)
    At = A @ Binv
    eig = lc.sym_eigen(At.T @ At)
    mu2, V = eig.eigenvalues, eig.eigenvectors
    mu_sq = np.concatenate([[mu2[0], mu2[-1]], mu2[1:-1]])
    v = np.column_stack([V[:, 0], V[:, -1], V[:, 1:-1]])
    A0 = (v * np.sqrt(np.maximum(mu_sq, 0.0))) @ v.T
    gap = mu_sq[1] - mu_sq[0]
    if abs(gap) <= 1e-10:
        raise DegenerateSpectrum("top and bottom stretches coincide")
    c1 = math.sqrt(max((mu_sq[1] - 1.0) / gap, 0.0))
    c2 = math.sqrt(max((1.0 - mu_sq[0]) / gap, 0.0))
    w = np.empty((n, n - 1))
    w[:, 0] = c1 * v[:, 0] + c2 * v[:, 1]
    w[:, 0] /= np.linalg.norm(w[:, 0])
    if n > 2:
        w[:, 1:] = v[:, 2:]
    img = A0 @ w
    # A0 acts isometrically on span(w); re-orthonormalize against roundoff
    img_q, img_r = np.linalg.qr(img)
    img = img_q * np.sign(np.diag(img_r))
    wn = _complete_frame(w)
    un = _complete_frame(img)
    F = np.column_stack([w, wn])
    G = np.column_stack([img, un])
    Q = G @ F.T
    if np.linalg.det(Q) < 0:
        G[:, -1] = -G[:, -1]
        Q = G @ F.T
    a = (A0 - Q) @ wn
    b = B.T @ wn
    Y = Q @ B
    X = Y + np.outer(a, b)
    return X, Y, a, b


def connection(K: WellFamily, i: int, j: int) -> Optional[Rank1Connection]:
    conn = rank1_connect(K[i], K[j])
    if conn is None:
        return None
    p, q = conn
    if not (np.any(p) or np.any(q)):
        return None
    X, Y, a, b = rank1_witness(K[i], K[j])
    return Rank1Connection(i, j, p, q, X, Y, a, b)


class _UnionFind:
    def __init__(self, m):
        self.parent = list(range(m))

    def find(self, x):
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def spanning_tree(m: int, edges: Sequence[tuple[int, int]]) -> list[tuple[int, int]]:
    """Breadth-first tree from vertex 0, children visited in index order."""
    adj = {k: set() for k in range(m)}
    for i, j in edges:
        adj[i].add(j)
        adj[j].add(i)
    seen = {0}
    out = []
    dq = deque([0])
    while dq:
        u = dq.popleft()
        for w in sorted(adj[u]):
            if w not in seen:
                seen.add(w)
                out.append((u, w))
                dq.append(w)
    return out


def tree_vectors(K: WellFamily, tree: Sequence[tuple[int, int]]) -> list[tuple[np.ndarray, np.ndarray]]:
    """(p_k, q_k) for each oriented tree edge (i, j): A_i^TA_i - A_j^TA_j = pp^T - qq^T."""
    out = []
    for i, j in tree:
        conn = rank1_connect(K[i], K[j])
        if conn is None:
            raise NotConnected(f"tree edge ({i}, {j}) is not rank-one connected")
        out.append(conn)
    return out


def is_generic(vectors: Sequence[np.ndarray], n: int) -> bool:
    """Every n-subset of the nonzero vectors is linearly independent.

    With fewer than n vectors, all of them must be independent.
    """
    vs = [np.asarray(v, dtype=float) for v in vectors if np.linalg.norm(v) > 0]
    k = min(n, len(vs))
    for sub in itertools.combinations(range(len(vs)), k):
        if lc.matrix_rank(np.array([vs[s] for s in sub])) < k:
            return False
    return True


def hypothesis_forms(K: WellFamily, i: int, which: str) -> list[np.ndarray]:
    """Quadratic forms D_j whose positivity at v is the hypothesis for well i."""
    which = which.upper()
    if which == "H1":
        G = [A.T @ A for A in K]
    elif which == "H2":
        inv = [np.linalg.inv(A) for A in K]
        G = [Ai @ Ai.T for Ai in inv]
    else:
        raise ValueError(f"unknown hypothesis {which!r}")
    return [G[i] - G[j] for j in range(len(K)) if j != i]


def evaluate_margin(K: WellFamily, i: int, v, which: str = "H1") -> float:
    v = np.asarray(v, dtype=float)
    v = v / np.linalg.norm(v)
    forms = hypothesis_forms(K, i, which)
    if not forms:
        return math.inf
    return float(min(v @ D @ v for D in forms))


def separating_directions(K: WellFamily, tree: Sequence[tuple[int, int]], vectors=None) -> list[Optional[Direction]]:
    """Constructive H1 directions via sign propagation along the spanning tree.

    The returned margin is the path-sum of (p.v)^2 - (q.v)^2, minimized over
    competitors; it equals min_j |A_i v|^2 - |A_j v|^2 algebraically.
    Entries are None for wells whose free connection vector is zero.
    """
    m, n = K.m, K.n
    if m == 1:
        return [ABSENT]
    if vectors is None:
        vectors = tree_vectors(K, tree)
    flat = [x for pq in vectors for x in pq]
    if not is_generic(flat, n):
        raise NotGeneric("connection vectors are not in general position")
    adj = {k: [] for k in range(m)}
    for e, (a, b) in enumerate(tree):
        adj[a].append((b, e, +1))
        adj[b].append((a, e, -1))
    out = []
    for target in range(m):
        sign = {}
        parent = {target: None}
        dq = deque([target])
        while dq:
            u = dq.popleft()
            for w, e, s in sorted(adj[u]):
                if w not in parent:
                    parent[w] = (u, e)
                    sign[e] = s
                    dq.append(w)
        r = [vectors[e][1] if sign[e] > 0 else vectors[e][0] for e in range(len(tree))]
        s_other = [vectors[e][0] if sign[e] > 0 else vectors[e][1] for e in range(len(tree))]
        N = lc.nullspace(np.array(r), n=n)
        if N.shape[0] == 0:
            raise NotGeneric("constraint vectors fill the space")
        if N.shape[0] == 1:
            v = N[0]
        else:
            comb = np.zeros(n)
            for sv in s_other:
                ps = N.T @ (N @ sv)
                nrm = np.linalg.norm(ps)
                if nrm > 0:
                    comb += ps / nrm if ps @ comb >= 0 else -ps / nrm
            v = comb if np.linalg.norm(comb) > 0 else N[0]
            v = v / np.linalg.norm(v)
        v = v * (1.0 if v[np.argmax(np.abs(v))] > 0 else -1.0)
        if any(np.linalg.norm(sv) == 0.0 for sv in s_other):
            # one-sided connection: the free term vanishes, nothing to certify
            out.append(None)
            continue
        for sv in s_other:
            if abs(sv @ v) <= lc.RANK_TOL * (1.0 + np.linalg.norm(sv)):
                raise MarginNonPositive(f"well {target}: direction orthogonal to a free vector")
        margins = []
        for j in range(m):
            if j == target:
                continue
            tot = 0.0
            u = j
            while parent[u] is not None:
                pu, e = parent[u]
                pe, qe = vectors[e]
                term = (pe @ v) ** 2 - (qe @ v) ** 2
                tot += term * sign[e]
                u = pu
            margins.append(tot)
        margin = float(min(margins))
        if not margin > 0:
            raise MarginNonPositive(f"well {target}: margin {margin:.3e}")
        out.append(Direction(v, margin))
    return out


def _sphere(rng: np.random.Generator, k: int, n: int) -> np.ndarray:
    X = rng.standard_normal((k, n))
    return X / np.linalg.norm(X, axis=1, keepdims=True)


def verify_hypothesis(
    K: WellFamily,
    i: int,
    which: str = "H1",
    seed: int = 0,
    n_samples: int = 20000,
    refine_steps: int = 200,
) -> Optional[Direction]:
    """Sampled search for v with min_j v^T D_j v > 0; None when nothing is found.

    Not finding a certificate says nothing about whether one exists.
    """
    forms = hypothesis_forms(K, i, which)
    if not forms:
        return ABSENT
    D = np.stack(forms)
    code = 1 if which.upper() == "H1" else 2
    rng = stream(seed, i, code)
    V = _sphere(rng, n_samples, K.n)
    vals = np.einsum("sa,jab,sb->sj", V, D, V).min(axis=1)
    best = int(np.argmax(vals))
    v, f = V[best], float(vals[best])
    step = 0.5
    for _ in range(refine_steps):
        qv = np.einsum("a,jab,b->j", v, D, v)
        jstar = int(np.argmin(qv))
        g = 2.0 * D[jstar] @ v
        g = g - (g @ v) * v
        if np.linalg.norm(g) < 1e-15:
            break
        cand = v + step * g
        cand /= np.linalg.norm(cand)
        fc = float(np.einsum("a,jab,b->j", cand, D, cand).min())
        if fc > f:
            v, f = cand, fc
        else:
            step *= 0.5
    if f > CERT_TOL:
        v = v * (1.0 if v[np.argmax(np.abs(v))] > 0 else -1.0)
        return Direction(v, f)
    return None


def two_well_exact(K: WellFamily, i: int, which: str = "H1") -> Optional[Direction]:
    """Exact test for m = 2: top eigenvalue of the single difference form."""
    if K.m != 2:
        raise ValueError("exact test needs exactly two wells")
    (D,) = hypothesis_forms(K, i, which)
    eig = lc.sym_eigen(0.5 * (D + D.T))
    lam = float(eig.eigenvalues[0])
    if lam > CERT_TOL:
        return Direction(eig.eigenvectors[:, 0], lam)
    return None


def sigma_margin(K: WellFamily) -> float:
    n = K.n
    terms = [1.0]
    for i in range(K.m):
        for j in range(K.m):
            if i != j:
                d, _ = lc.dist_to_well(K[i], K[j])
                terms.append(0.25 * d)
    for A in K:
        L = n * (np.linalg.norm(A) + 1.0) ** (n - 1)
        terms.append(abs(np.linalg.det(A)) / (1.0 + L))
    return float(min(terms))


def compatibility_report(K: WellFamily, seed: int = 0, n_samples: int = 20000, refine_steps: int = 200) -> CompatibilityReport:
    m, n = K.m, K.n
    edges = []
    uf = _UnionFind(m)
    for i in range(m):
        for j in range(i + 1, m):
            c = connection(K, i, j)
            if c is not None:
                edges.append(c)
                uf.union(i, j)
    connected = len({uf.find(k) for k in range(m)}) == 1
    rep = CompatibilityReport(m=m, n=n, edges=edges, connected=connected, sigma=K.sigma)
    if connected:
        rep.spanning_tree = spanning_tree(m, [(e.i, e.j) for e in edges])
    if connected and m <= n:
        vecs = tree_vectors(K, rep.spanning_tree)
        rep.generic = is_generic([x for pq in vecs for x in pq], n)
        if rep.generic:
            rep.constructive = separating_directions(K, rep.spanning_tree, vecs)
    rep.directions_h1 = [verify_hypothesis(K, i, "H1", seed, n_samples, refine_steps) for i in range(m)]
    rep.directions_h2 = [verify_hypothesis(K, i, "H2", seed, n_samples, refine_steps) for i in range(m)]
    if m == 2:
        rep.exact_h1 = [two_well_exact(K, i, "H1") for i in range(m)]
        rep.exact_h2 = [two_well_exact(K, i, "H2") for i in range(m)]
        ok = True
        for i in range(m):
            search = rep.directions_h1[i] is not None or rep.directions_h2[i] is not None
            exact = rep.exact_h1[i] is not None or rep.exact_h2[i] is not None
            agree = (rep.directions_h1[i] is not None) == (rep.exact_h1[i] is not None) and (
                rep.directions_h2[i] is not None
            ) == (rep.exact_h2[i] is not None)
            ok = ok and search and exact and agree
        rep.dichotomy_ok = ok
    return rep


def shrink_margin(K: WellFamily, i: int, tau) -> float:
    """alpha with |A_i tau| = (1 + alpha) max_{j != i} |A_j tau|."""
    tau = np.asarray(tau, dtype=float)
    tau = tau / np.linalg.norm(tau)
    own = np.linalg.norm(K[i] @ tau)
    other = max((np.linalg.norm(K[j] @ tau) for j in range(K.m) if j != i), default=0.0)
    if other == 0.0:
        return math.inf
    return own / other - 1.0


def _sample_matrices(K: WellFamily, rng: np.random.Generator, count: int) -> np.ndarray:
    n, m = K.n, K.m
    n_bg = count // 5
    per = (count - n_bg) // m
    out = []
    for j, A in enumerate(K):
        Z = rng.standard_normal((per, n, n))
        Qm, Rm = np.linalg.qr(Z)
        d = np.sign(np.diagonal(Rm, axis1=1, axis2=2))
        Qm = Qm * d[:, None, :]
        flip = np.linalg.det(Qm) < 0
        Qm[flip, :, 0] *= -1
        E = rng.standard_normal((per, n, n))
        E /= np.linalg.norm(E, axis=(1, 2), keepdims=True)
        delta = rng.uniform(0.0, 1.0, per) ** 2 * max(K.sigma, 0.1)
        out.append(Qm @ A + delta[:, None, None] * E)
    scale = max(np.linalg.norm(A) for A in K)
    out.append(scale * rng.standard_normal((count - per * m, n, n)))
    return np.concatenate(out)


def majorization_constants(K: WellFamily, i: int, tau, v, R, seed: int = 0, n_samples: int = 100000, extra=None):
    """Smallest (c1, c2) on the grid 2^k, k = 0..20, with
    d(M, SO(n)A_i) <= c1 d(M, K) + c2 v^T (R - M) tau on a sampled cloud.

    ``tau`` and ``v`` may be stacks (k, n); the pair must then work for every row.
    ``extra`` (k, n, n) matrices, e.g. gradients of a field under test, join the cloud."""
    tau = np.atleast_2d(np.asarray(tau, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    if tau.shape != v.shape or tau.shape[1] != K.n:
        raise ValueError("tau and v must be matching (k, n) stacks")
    R = lc.as_square(R)
    rng = stream(seed, 7001, i)
    Ms = _sample_matrices(K, rng, n_samples)
    if extra is not None:
        Ms = np.concatenate([Ms, np.asarray(extra, dtype=float).reshape(-1, K.n, K.n)])
    d_i, _ = lc.dist_to_well_many(Ms, K[i])
    d_K, _ = lc.dist_to_family_many(Ms, K.wells)
    g = np.einsum("ka,ab,kb->k", v, R, tau)[:, None] - np.einsum("ka,sab,kb->ks", v, Ms, tau)
    grid = [2.0**k for k in range(0, 21)]
    best = None
    # points within roundoff of K must satisfy the inequality through c2 alone
    tol = 1e-10
    pos = d_K > tol
    for c2 in grid:
        slack = d_i[None, :] - c2 * g
        if np.any(slack[:, ~pos] > tol * (1.0 + c2)):
            continue
        need = float(np.max(slack[:, pos] / d_K[pos], initial=0.0))
        c1 = next((c for c in grid if c >= need), None)
        if c1 is None:
            continue
        if best is None or c1 + c2 < best[0] + best[1]:
            best = (c1, c2)
    if best is None:
        raise NoConstantsFound("no grid pair up to 2^20 satisfies the inequality")
    return best
