"""Lipschitz truncation through the discrete maximal function of |Du|."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from ..errors import BadParams, EmptyGoodSet
from .grid import GridField, dilate, differentiate, face_perimeter, gradient, node_coords

ENVELOPE_CHUNK = 2048


def maximal_function(g: np.ndarray, mask: np.ndarray, h: float, r_max: float = 2.0) -> np.ndarray:
    """max over r in {h, 2h, ..., r_max} of the mean of g over masked nodes in B_r(x)."""
    n = mask.ndim
    gm = np.where(mask, g, 0.0)
    cnt = mask.astype(float)
    kmax = int(math.floor(r_max / h + 1e-9))
    ax = np.arange(-kmax, kmax + 1)
    offs = np.stack(np.meshgrid(*([ax] * n), indexing="ij"), axis=-1)
    dist2 = np.sum(offs.astype(float) ** 2, axis=-1)
    best = np.zeros(mask.shape)
    top = float(gm.max()) if gm.size else 0.0
    for k in range(1, kmax + 1):
        ker = (dist2 <= k * k + 1e-9).astype(float)
        lo = kmax - k
        sl = tuple([slice(lo, lo + 2 * k + 1)] * n)
        ker = ker[sl]
        s = fftconvolve(gm, ker, mode="same")
        c = np.rint(fftconvolve(cnt, ker, mode="same"))
        avg = np.where(c > 0, s / np.maximum(c, 1.0), 0.0)
        best = np.maximum(best, avg)
    # averages can never exceed the largest sample; clip FFT roundoff
    return np.clip(best, 0.0, top) * mask


def neighbour_lipschitz(vals: np.ndarray, mask: np.ndarray, h: float) -> float:
    """max |w(x) - w(y)| / |x - y| over masked node pairs in a common 3^n box."""
    n = mask.ndim
    N = mask.shape[0]
    best = 0.0
    for off in itertools.product((0, 1, -1), repeat=n):
        # each unordered pair once: first nonzero offset positive
        nz = [o for o in off if o]
        if not nz or nz[0] < 0:
            continue
        src = tuple(slice(max(0, -o), N - max(0, o)) for o in off)
        dst = tuple(slice(max(0, o), N - max(0, -o)) for o in off)
        both = mask[src] & mask[dst]
        if not both.any():
            continue
        d = np.linalg.norm(vals[dst] - vals[src], axis=-1)[both]
        best = max(best, float(d.max()) / (h * math.sqrt(len(nz))))
    return best


@dataclass
class TruncationResult:
    w: GridField
    E: np.ndarray
    E_dilated: np.ndarray
    good: np.ndarray
    maximal: np.ndarray
    stats: dict


def lipschitz_truncate(f: GridField, lam: float, q: float = 1.0, c_L: float | None = None) -> TruncationResult:
    if not lam > 0:
        raise BadParams("lambda must be positive")
    n, h = f.n, f.h
    mask = f.mask
    c_L = math.sqrt(n) if c_L is None else c_L
    Du, _ = differentiate(f)
    g = np.sqrt(np.sum(Du**2, axis=(-2, -1)))
    M = maximal_function(g, mask, h)
    good = mask & (M <= lam)
    if not good.any():
        raise EmptyGoodSet(f"no node has maximal function below {lam}")
    E = mask & ~good
    vals = np.array(f.values)
    if E.any():
        X = node_coords(n, f.N)
        xs_good = X[good]
        u_good = f.values[good]
        targets = np.argwhere(E)
        for start in range(0, len(targets), ENVELOPE_CHUNK):
            idx = targets[start : start + ENVELOPE_CHUNK]
            pts = X[tuple(idx.T)]
            dist = np.sqrt(np.sum((pts[:, None, :] - xs_good[None, :, :]) ** 2, axis=-1))
            env = np.min(u_good[None, :, :] + (c_L * lam) * dist[:, :, None], axis=1)
            vals[tuple(idx.T)] = env
    w = GridField(vals, dict(f.meta, truncated_at=lam))
    Dw = gradient(w)
    Ed = dilate(E, mask)
    vol = f.cell_volume
    diff = np.sqrt(np.sum((Du - Dw) ** 2, axis=(-2, -1)))
    big = mask & (g > lam)
    tail_int = float(np.sum(g[big] ** q) * vol)
    tail = tail_int / lam**q
    stats = {
        "lambda": lam,
        "c_L": c_L,
        "lip_w": neighbour_lipschitz(w.values, mask, h),
        "grad_w_max": float(np.max(np.sqrt(np.sum(Dw[mask] ** 2, axis=(-2, -1))))),
        "E_measure": float(E.sum() * vol),
        "E_dilated_measure": float(Ed.sum() * vol),
        "E_dilated_perimeter": face_perimeter(Ed, mask, h),
        "grad_diff_q": float(np.sum(diff[mask] ** q) * vol),
        "tail_q": tail,
        "tail_int": tail_int,
        "q": q,
        "superlevel_measure": float(np.sum(mask & (M > lam)) * vol),
    }
    return TruncationResult(w, E, Ed, good, M, stats)
