"""Synthetic deformation fields: affine maps, mollified laminates and laminae
between rank-one connected wells, a piecewise-affine four-gradient
construction on an equilateral triangle, and smooth perturbations."""

from __future__ import annotations

import math
from functools import lru_cache
from typing import Any, Mapping, Optional

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.ndimage import convolve

from ..errors import BadParams
from ..parallel import stream
from ..well_structure import WellFamily, rank1_witness
from .grid import GridField, node_coords, spacing

BUMP_QUAD_POINTS = 2048


def bump(z):
    """Unnormalised exp(1/(z^2 - 1)) on |z| < 1, zero outside; z scalar or radius."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    r2 = z * z
    out = np.zeros_like(r2)
    inside = r2 < 1.0
    out[inside] = np.exp(1.0 / (r2[inside] - 1.0))
    return out


@lru_cache(maxsize=None)
def bump_constant_1d() -> float:
    # composite midpoint rule on [-1, 1]
    k = BUMP_QUAD_POINTS
    z = -1.0 + (np.arange(k) + 0.5) * (2.0 / k)
    return 1.0 / float(np.sum(bump(z)) * (2.0 / k))


@lru_cache(maxsize=None)
def _profile_splines():
    c = bump_constant_1d()
    t = np.linspace(-1.0, 1.0, 4097)
    dens = c * bump(t)
    G = CubicSpline(t, dens).antiderivative()
    g_at_1 = float(G(1.0))
    # rescale so the CDF reaches exactly 1
    Gs = CubicSpline(t, G(t) / g_at_1)
    H = Gs.antiderivative()
    return Gs, H, float(H(1.0))


def mollified_step(t, width: float):
    """Heaviside(t) convolved with the normalised bump of half-width ``width``."""
    t = np.asarray(t, dtype=float)
    if width <= 0:
        return (t > 0).astype(float) + 0.5 * (t == 0)
    G, _, _ = _profile_splines()
    tau = t / width
    out = np.where(tau >= 1.0, 1.0, 0.0)
    mid = np.abs(tau) < 1.0
    out[mid] = G(tau[mid])
    return out


def mollified_ramp(t, width: float):
    """max(t, 0) convolved with the normalised bump of half-width ``width``."""
    t = np.asarray(t, dtype=float)
    if width <= 0:
        return np.maximum(t, 0.0)
    _, H, H1 = _profile_splines()
    tau = t / width
    out = np.where(tau >= 1.0, t - width * (H1 - 1.0), 0.0)
    mid = np.abs(tau) < 1.0
    out[mid] = width * H(tau[mid])
    return out


def _as_float(params, key, default=None):
    if key not in params:
        if default is None:
            raise BadParams(f"missing parameter {key!r}")
        return float(default)
    try:
        return float(params[key])
    except (TypeError, ValueError) as e:
        raise BadParams(f"parameter {key!r} must be a number") from e


def _as_int(params, key, default=None):
    v = _as_float(params, key, default)
    if v != int(v):
        raise BadParams(f"parameter {key!r} must be an integer")
    return int(v)


def _as_matrix(params, key, n, default=None):
    if key not in params:
        if default is None:
            raise BadParams(f"missing parameter {key!r}")
        return np.asarray(default, dtype=float)
    raw = params[key]
    if isinstance(raw, str):
        raw = [float(x) for x in raw.replace(";", ",").split(",") if x.strip()]
    try:
        M = np.asarray(raw, dtype=float).reshape(n, n)
    except (TypeError, ValueError) as e:
        raise BadParams(f"parameter {key!r} must hold {n * n} numbers") from e
    if not np.all(np.isfinite(M)):
        raise BadParams(f"parameter {key!r} is not finite")
    return M


ALLOWED = {
    "affine": {"R", "t"},
    "laminate": {"i", "j", "theta", "period", "mollify_width", "offset"},
    "lamina": {"i", "j", "t", "alpha", "mollify_width", "offset"},
    "counterexample4": {"ell", "mollify_width"},
    "perturbed": {"R", "amplitude", "wavelength"},
}
ALIASES = {"sigma": "mollify_width", "varsigma": "mollify_width", "l": "ell", "volume_fraction": "theta", "extent": "alpha"}


def normalise_params(kind: str, params: Mapping[str, Any]) -> dict:
    if kind not in ALLOWED:
        raise BadParams(f"unknown generator kind {kind!r}; choose from {sorted(ALLOWED)}")
    out = {}
    for k, v in params.items():
        k2 = ALIASES.get(k, k)
        if k2 not in ALLOWED[kind]:
            raise BadParams(f"unknown parameter {k!r} for kind {kind!r}")
        out[k2] = v
    return out


def _check_width(width: float, h: float, strict: bool = True):
    if width < 0:
        raise BadParams("mollify_width must be non-negative")
    if strict and 0 < width < 4 * h - 1e-15:
        raise BadParams(f"mollify_width {width} below the 4h = {4 * h} resolution limit")


def _witness(K: Optional[WellFamily], params, n):
    if K is None:
        raise BadParams("this generator needs a well family")
    if K.n != n:
        raise BadParams("well family dimension does not match n")
    i = _as_int(params, "i", 0)
    j = _as_int(params, "j", 1)
    if not (0 <= i < K.m and 0 <= j < K.m) or i == j:
        raise BadParams("well indices i, j out of range or equal")
    X, Y, a, b = rank1_witness(K[i], K[j])
    return i, j, X, Y, a, b


def laminate_field(K, params, n, N):
    """Du = X on a theta-fraction of periodic layers, Y elsewhere (before mollification)."""
    h = spacing(N)
    i, j, X, Y, a, b = _witness(K, params, n)
    theta = _as_float(params, "theta", 0.5)
    period = _as_float(params, "period", 0.5)
    width = _as_float(params, "mollify_width", 0.0)
    offset = _as_float(params, "offset", 0.0)
    if not 0.0 <= theta <= 1.0 or period <= 0:
        raise BadParams("need 0 <= theta <= 1 and period > 0")
    _check_width(width, h)
    bn = np.linalg.norm(b)
    bh = b / bn
    Ybar = Y + theta * np.outer(a, b)
    X_ = node_coords(n, N).reshape(-1, n)
    s = X_ @ bh
    smax = math.sqrt(n) + period + width
    k0 = math.floor((-smax - offset) / period) - 1
    k1 = math.ceil((smax - offset) / period) + 1
    phi = -theta * s
    for k in range(k0, k1 + 1):
        lo = offset + k * period
        hi = lo + theta * period
        phi = phi + mollified_ramp(s - lo, width) - mollified_ramp(s - hi, width)
    vals = X_ @ Ybar.T + np.outer(phi, a * bn)
    meta = {
        "kind": "laminate",
        "i": i,
        "j": j,
        "X": X.reshape(-1).tolist(),
        "Y": Y.reshape(-1).tolist(),
        "a": a.tolist(),
        "b": b.tolist(),
    }
    return vals.reshape((N,) * n + (n,)), meta


def _transverse_cutoff(X_, bh, alpha, width):
    P = X_ - np.outer(X_ @ bh, bh)
    r = np.linalg.norm(P, axis=1)
    return mollified_step(alpha / 2.0 - r, width)


def lamina_field(K, params, n, N, strict=True):
    """Single band of X-gradient, thickness t, inside a Y background.

    A cross-extent alpha below the ball diameter truncates the band
    transversally with a mollified cutoff (this costs incompatibility energy).
    """
    h = spacing(N)
    i, j, X, Y, a, b = _witness(K, params, n)
    t = _as_float(params, "t")
    alpha = _as_float(params, "alpha", 4.0)
    width = _as_float(params, "mollify_width", 0.0)
    offset = _as_float(params, "offset", 0.0)
    if t <= 0 or alpha <= 0:
        raise BadParams("need t > 0 and alpha > 0")
    _check_width(width, h, strict)
    bn = np.linalg.norm(b)
    bh = b / bn
    X_ = node_coords(n, N).reshape(-1, n)
    s = X_ @ bh
    lo, hi = offset - t / 2.0, offset + t / 2.0
    phi = mollified_ramp(s - lo, width) - mollified_ramp(s - hi, width)
    if alpha < 2.0 * math.sqrt(n):
        phi = phi * _transverse_cutoff(X_, bh, alpha, width)
    vals = X_ @ Y.T + np.outer(phi, a * bn)
    meta = {
        "kind": "lamina",
        "i": i,
        "j": j,
        "X": X.reshape(-1).tolist(),
        "Y": Y.reshape(-1).tolist(),
        "a": a.tolist(),
        "b": b.tolist(),
    }
    return vals.reshape((N,) * n + (n,)), meta


def triangle_construction(ell: float, twist=(0.5, 0.3)):
    """Continuous piecewise-affine map equal to x outside an equilateral triangle
    of side ell centred at 0, affine on the three sub-triangles cut from its
    centroid.

    Returns (vertices, gradients [exterior, T_1, T_2, T_3], centre value).
    The centre displacement is twist[0] times the inradius, at angle twist[1].
    """
    Rc = ell / math.sqrt(3.0)
    ang = np.pi / 2 + 2 * np.pi * np.arange(3) / 3
    V = Rc * np.column_stack([np.cos(ang), np.sin(ang)])
    r_in = ell / (2 * math.sqrt(3.0))
    w = twist[0] * r_in * np.array([math.cos(twist[1]), math.sin(twist[1])])
    grads = [np.eye(2)]
    c = np.zeros(2)
    for k in range(3):
        P = np.array([V[k], V[(k + 1) % 3], c])
        img = P + np.array([np.zeros(2), np.zeros(2), w])
        # affine map through three point pairs: [G | t] [P; 1] = img
        M = np.hstack([P, np.ones((3, 1))])
        sol = np.linalg.solve(M, img)
        grads.append(sol[:2].T)
    return V, grads, w


def _hat_value(pts, V, w):
    """Displacement of the triangle construction at points (k, 2)."""
    out = np.zeros_like(pts)
    c = np.zeros(2)
    for k in range(3):
        P = np.array([V[k], V[(k + 1) % 3], c])
        T = np.column_stack([P[0] - P[2], P[1] - P[2]])
        lam = np.linalg.solve(T, (pts - P[2]).T).T
        l3 = 1.0 - lam.sum(axis=1)
        inside = (lam >= -1e-14).all(axis=1) & (l3 >= -1e-14)
        out[inside] = np.outer(l3[inside], w)
    return out


def counterexample_field(params, n, N):
    if n != 2:
        raise BadParams("counterexample4 is planar only")
    h = spacing(N)
    ell = _as_float(params, "ell", 0.5)
    width = _as_float(params, "mollify_width", 0.0)
    if not 0 < ell <= 1.5:
        raise BadParams("ell must lie in (0, 1.5]")
    _check_width(width, h)
    V, grads, w = triangle_construction(ell)
    X_ = node_coords(2, N).reshape(-1, 2)
    disp = _hat_value(X_, V, w).reshape(N, N, 2)
    if width > 0:
        r = int(math.ceil(width / h))
        ax = np.arange(-r, r + 1) * h
        Z = np.stack(np.meshgrid(ax, ax, indexing="ij"), axis=-1)
        ker = bump(np.sqrt(np.sum(Z**2, axis=-1)) / width)
        ker /= ker.sum()
        disp = np.stack([convolve(disp[..., a], ker, mode="constant", cval=0.0) for a in range(2)], axis=-1)
    vals = node_coords(2, N) + disp
    meta = {
        "kind": "counterexample4",
        "vertices": V.tolist(),
        "wells": [G.reshape(-1).tolist() for G in grads],
        "centre_displacement": w.tolist(),
    }
    return vals, meta


def affine_field(params, n, N):
    R = _as_matrix(params, "R", n, np.eye(n))
    t = np.zeros(n) if "t" not in params else np.asarray(
        [float(x) for x in str(params["t"]).split(",")] if isinstance(params["t"], str) else params["t"], dtype=float
    ).reshape(n)
    X_ = node_coords(n, N)
    return X_ @ R.T + t, {"kind": "affine", "R": R.reshape(-1).tolist(), "t": t.tolist()}


def perturbed_field(params, n, N, seed):
    R = _as_matrix(params, "R", n, np.eye(n))
    amp = _as_float(params, "amplitude", 0.01)
    lam = _as_float(params, "wavelength", 0.25)
    if amp < 0 or lam <= 0:
        raise BadParams("need amplitude >= 0 and wavelength > 0")
    rng = stream(seed, 3101)
    dirs = rng.standard_normal((n, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    phase = rng.uniform(0, 2 * np.pi, n)
    X_ = node_coords(n, N)
    per = amp / math.sqrt(n)
    noise = per * np.sin(2 * np.pi * (X_ @ dirs.T) / lam + phase)
    return X_ @ R.T + noise, {"kind": "perturbed", "R": R.reshape(-1).tolist()}


def gen(
    kind: str,
    params: Mapping[str, Any] | None = None,
    N: int = 65,
    seed: int = 0,
    wells: WellFamily | None = None,
    n: int | None = None,
    strict: bool = True,
) -> GridField:
    """Build a field of the given kind. ``strict=False`` lets the lamina be
    sampled with a mollification narrower than 4h (layers then under-resolved)."""
    params = normalise_params(kind, dict(params or {}))
    if n is None:
        n = wells.n if wells is not None else 2
    if n not in (2, 3):
        raise BadParams("fields support n = 2 or 3")
    if N < 17:
        raise BadParams("need N >= 17")
    if kind == "affine":
        vals, meta = affine_field(params, n, N)
    elif kind == "laminate":
        vals, meta = laminate_field(wells, params, n, N)
    elif kind == "lamina":
        vals, meta = lamina_field(wells, params, n, N, strict)
    elif kind == "counterexample4":
        vals, meta = counterexample_field(params, n, N)
    else:
        vals, meta = perturbed_field(params, n, N, seed)
    meta["params"] = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in params.items()}
    meta["N"] = N
    meta["seed"] = seed
    return GridField(vals, meta)
