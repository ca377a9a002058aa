"""Diagnostics of a grid field against a well family: energy, majority
phase, pair statistics, the simplex integration-by-parts check and an
affine L-infinity fit."""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .. import linalg_core as lc
from ..errors import BadParams, HypothesisViolated, NoGoodSimplex, NoMajority
from ..parallel import chunks, pmap, stream
from ..registration import AffineMap, PointCorrespondence, recover_orthogonal_affine, regular_simplex
from ..well_structure import WellFamily, shrink_margin
from .grid import GridField, differentiate, face_perimeter, interpolate, interpolate_gradient

QUANTILES = (0.01, 0.05, 0.25, 0.50, 0.75, 0.95, 0.99)
PAIR_CHUNK = 4096


@dataclass
class EnergyBreakdown:
    sigma_param: float
    p: float
    q: float
    first_term: float
    second_term: float
    total: float
    epsilon: float

    def to_json(self):
        return asdict(self)


def energy(f: GridField, K: WellFamily, sigma: float, p: float, q: float) -> EnergyBreakdown:
    """(1/s) int d^p(Du, K) + (1/s) int s^q |D^2u|^q by the node (midpoint) rule."""
    if not 0 < sigma <= 1:
        raise BadParams("sigma must lie in (0, 1]")
    if p < 1 or q < 1:
        raise BadParams("need p >= 1 and q >= 1")
    mask = f.mask
    Du, hess = differentiate(f)
    d, _ = lc.dist_to_family_many(Du[mask], K.wells)
    vol = f.cell_volume
    first = float(np.sum(d**p) * vol / sigma)
    second = float(np.sum((sigma * hess[mask]) ** q) * vol / sigma)
    return EnergyBreakdown(sigma, p, q, first, second, first + second, sigma ** (1.0 / p))


def holder_exponent(p: float, q: float) -> float:
    """s = 1 + p/q*, q* the conjugate of q; s = 1 when q = 1."""
    if q == 1:
        return 1.0
    qstar = q / (q - 1.0)
    return 1.0 + p / qstar


@dataclass
class MajorityResult:
    index: int
    U0: np.ndarray
    alpha: float
    perimeter: float
    volume_fraction: float
    complement_volume: float
    tie: bool = False

    def to_json(self):
        return {
            "index": self.index,
            "alpha": self.alpha,
            "perimeter": self.perimeter,
            "volume_fraction": self.volume_fraction,
            "complement_volume": self.complement_volume,
            "tie": self.tie,
            "U0_count": int(self.U0.sum()),
        }


def majority_phase(f: GridField, K: WellFamily, p: float = 1.0, q: float = 1.0, n_alpha: int = 64) -> MajorityResult:
    mask = f.mask
    Du, _ = differentiate(f)
    d, idx = lc.dist_to_family_many(Du, K.wells)
    s = holder_exponent(p, q)
    J = d**s
    sig = K.sigma
    lo, hi = (sig / 2.0) ** s, sig**s
    alphas = lo * (hi / lo) ** (np.arange(1, n_alpha + 1) / (n_alpha + 1))
    best = None
    for a in alphas:
        U = mask & (J < a)
        per = face_perimeter(U, mask, f.h)
        if best is None or per < best[1]:
            best = (a, per, U)
    alpha, per, U0 = best
    total = int(mask.sum())
    frac = U0.sum() / total
    if frac < 0.5:
        raise NoMajority(f"near-well set covers only {frac:.3f} of the ball")
    counts = np.bincount(idx[U0], minlength=K.m)
    top = int(np.argmax(counts))
    tie = int(np.sum(counts == counts[top])) > 1
    if tie:
        warnings.warn("balanced phases: majority index chosen as the smallest tied index", RuntimeWarning)
    vol = f.cell_volume
    return MajorityResult(top, U0, float(alpha), float(per), float(frac), float((total - U0.sum()) * vol), tie)


@dataclass
class PairStats:
    count: int
    quantiles: dict
    violating_fraction: float
    threshold: float
    median_abs: float
    seed: int

    def to_json(self):
        return asdict(self)


def _ball_points(rng: np.random.Generator, k: int, n: int, radius: float) -> np.ndarray:
    g = rng.standard_normal((k, n))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * (radius * rng.uniform(size=k) ** (1.0 / n))[:, None]


def pair_values(f: GridField, A: np.ndarray, n_pairs: int, seed: int, radius: float) -> np.ndarray:
    """s(x, y) = |u(y) - u(x)| - |A (x - y)| for seeded uniform pairs in B_radius."""
    if radius > 1.0 - 2.0 * f.h + 1e-12:
        raise BadParams(f"radius must be at most 1 - 2h = {1 - 2 * f.h}")

    def work(c):
        ci, a, b = c
        rng = stream(seed, 5011, ci)
        x = _ball_points(rng, b - a, f.n, radius)
        y = _ball_points(rng, b - a, f.n, radius)
        ux = interpolate(f.values, x)
        uy = interpolate(f.values, y)
        return np.linalg.norm(uy - ux, axis=1) - np.linalg.norm((x - y) @ A.T, axis=1)

    return np.concatenate(pmap(work, chunks(n_pairs, PAIR_CHUNK)))


def pair_statistics(
    f: GridField,
    K: WellFamily,
    i_star: int,
    eps: float,
    C: float = 1.0,
    n_pairs: int = 20000,
    seed: int = 0,
    radius: Optional[float] = None,
) -> PairStats:
    radius = 1.0 - 2.0 * f.h if radius is None else radius
    s = pair_values(f, K[i_star], n_pairs, seed, radius)
    qs = np.quantile(s, QUANTILES)
    thr = C * eps
    return PairStats(
        count=int(s.size),
        quantiles={f"{int(round(100 * k))}%": float(v) for k, v in zip(QUANTILES, qs)},
        violating_fraction=float(np.mean(np.abs(s) > thr)),
        threshold=float(thr),
        median_abs=float(np.median(np.abs(s))),
        seed=seed,
    )


# ------------------------------------------------------------ simplex check

@dataclass
class IbpResult:
    lhs: float
    rhs: float
    margin: float
    path_term: float
    boundary_term: float
    identity_error: float
    shrink_alpha: float
    min_weight_length: float

    def to_json(self):
        return asdict(self)


def barycentric(vertices: np.ndarray, x: np.ndarray) -> np.ndarray:
    V = np.asarray(vertices, dtype=float)
    T = (V[1:] - V[0]).T
    lam = np.linalg.solve(T, np.asarray(x, dtype=float) - V[0])
    return np.concatenate([[1.0 - lam.sum()], lam])


def segment_nodes(a: np.ndarray, b: np.ndarray, h: float, min_samples: int = 200):
    """Composite midpoint nodes and weights on [a, b], with panels split at grid
    hyperplane crossings so the multilinear interpolant is smooth on each panel."""
    L = float(np.linalg.norm(b - a))
    k = max(min_samples, int(math.ceil(8.0 * L / h)))
    cuts = [np.array([0.0, 1.0])]
    d = b - a
    for ax in range(a.size):
        if abs(d[ax]) < 1e-15:
            continue
        lo, hi = sorted((a[ax], b[ax]))
        planes = -1.0 + h * np.arange(math.ceil((lo + 1.0) / h), math.floor((hi + 1.0) / h) + 1)
        cuts.append((planes - a[ax]) / d[ax])
    br = np.unique(np.clip(np.concatenate(cuts), 0.0, 1.0))
    br = br[np.concatenate([[True], np.diff(br) > 1e-14])]
    br[-1] = 1.0
    widths = np.diff(br)
    per = np.maximum(1, np.ceil(widths * k).astype(int))
    t = np.concatenate([lo + (np.arange(m) + 0.5) * (wd / m) for lo, wd, m in zip(br[:-1], widths, per)])
    w = np.concatenate([np.full(m, wd / m) for wd, m in zip(widths, per)]) * L
    return a[None, :] + t[:, None] * d[None, :], w


def ibp_simplex_check(
    f: GridField,
    K: WellFamily,
    i_star: int,
    vertices,
    x,
    lmap: AffineMap,
    c1: float,
    c2: float,
    min_samples: int = 200,
) -> IbpResult:
    """Both sides of the segment inequality
        sum_i int_[x_i,x] d(Du, SO(n)A) <= c1 sum_i int d(Du, K) + c2 sum_i int v_i^T (R - Du) tau_i
    with the last sum also evaluated through its endpoint form."""
    V = np.asarray(vertices, dtype=float)
    x = np.asarray(x, dtype=float)
    R = lmap.O
    lam = barycentric(V, x)
    if np.any(lam <= 0):
        raise HypothesisViolated("x is not interior to the simplex")
    alphas = [shrink_margin(K, i_star, x - xi) for xi in V]
    alpha = float(min(alphas))
    if not alpha > 0:
        raise HypothesisViolated(f"shrink-direction margin {alpha:.3e} is not positive")
    A = K[i_star]
    lhs = 0.0
    dK_int = 0.0
    path = 0.0
    boundary = 0.0
    scale = 0.0
    for li, xi in zip(lam, V):
        tau = (x - xi) / np.linalg.norm(x - xi)
        v = li * R @ (x - xi)
        pts, w = segment_nodes(xi, x, f.h, min_samples)
        G = interpolate_gradient(f.values, pts)
        di, _ = lc.dist_to_well_many(G, A)
        dk, _ = lc.dist_to_family_many(G, K.wells)
        integrand = v @ R @ tau - np.einsum("a,sab,b->s", v, G, tau)
        lhs += float(w @ di)
        dK_int += float(w @ dk)
        path += float(w @ integrand)
        scale += float(w @ np.abs(integrand))
        ui = interpolate(f.values, xi[None])[0]
        boundary += -float(v @ (lmap(xi) - ui))
    ident = abs(path - boundary) / max(scale, abs(boundary), 1e-300)
    rhs = c1 * dK_int + c2 * boundary
    return IbpResult(
        lhs=lhs,
        rhs=rhs,
        margin=rhs - lhs,
        path_term=path,
        boundary_term=boundary,
        identity_error=float(ident),
        shrink_alpha=alpha,
        min_weight_length=float(min(li * np.linalg.norm(x - xi) for li, xi in zip(lam, V))),
    )


# ------------------------------------------------------------ affine fit

@dataclass
class AffineFit:
    map: AffineMap
    inlier_fraction: float
    residual: float
    distortion: float
    attempts: int
    threshold: float

    def to_json(self):
        return {
            "map": self.map.to_json(),
            "inlier_fraction": self.inlier_fraction,
            "residual": self.residual,
            "distortion": self.distortion,
            "attempts": self.attempts,
            "threshold": self.threshold,
        }


def affine_fit_report(
    f: GridField,
    K: WellFamily,
    i_star: int,
    eps: float,
    seed: int = 0,
    C: float = 10.0,
    simplex_radius: float = 0.8,
    n_points: int = 10000,
    max_tries: int = 100,
) -> AffineFit:
    n = f.n
    A = K[i_star]
    thr = C * eps
    base = regular_simplex(n, simplex_radius)
    reach = 1.0 - 2.0 * f.h
    for k in range(max_tries):
        rng = stream(seed, 6007, k)
        Q = lc.random_rotation(rng, n)
        shift = _ball_points(rng, 1, n, max(reach - simplex_radius, 0.0))[0]
        z = base @ Q.T + shift
        zeta = interpolate(f.values, z)
        pc = PointCorrespondence(z, zeta, A)
        dist = pc.distortion
        if dist > thr:
            continue
        lmap, res = recover_orthogonal_affine(pc)
        y = _ball_points(stream(seed, 6008, k), n_points, n, reach)
        err = np.linalg.norm(interpolate(f.values, y) - lmap(y), axis=1)
        return AffineFit(lmap, float(np.mean(err <= thr)), res, dist, k + 1, thr)
    raise NoGoodSimplex(f"no simplex with distortion <= {thr:.3e} in {max_tries} tries")


# ------------------------------------------------------------ segment hits

def segment_hit_fraction(rho: float, n: int, n_pairs: int = 100000, seed: int = 0, centre=None) -> float:
    """Fraction of uniform pairs (x, y) in B_1 x B_1 whose segment meets the sphere |z - c| = rho."""
    c = np.zeros(n) if centre is None else np.asarray(centre, dtype=float)

    def work(chunk):
        ci, a, b = chunk
        rng = stream(seed, 5021, ci)
        x = _ball_points(rng, b - a, n, 1.0) - c
        y = _ball_points(rng, b - a, n, 1.0) - c
        d = y - x
        dd = np.maximum(np.sum(d * d, axis=1), 1e-300)
        t = np.clip(-np.sum(x * d, axis=1) / dd, 0.0, 1.0)
        near = np.linalg.norm(x + t[:, None] * d, axis=1)
        far = np.maximum(np.linalg.norm(x, axis=1), np.linalg.norm(y, axis=1))
        # the distance to c is continuous along the segment
        return np.sum((near <= rho) & (far >= rho))

    hits = sum(pmap(work, chunks(n_pairs, PAIR_CHUNK)))
    return float(hits) / n_pairs
