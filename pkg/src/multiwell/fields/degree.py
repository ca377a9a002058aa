"""Brouwer degree of a grid map via its piecewise-affine (Kuhn) interpolant."""

from __future__ import annotations

import itertools

import numpy as np

from ..errors import BoundaryTooClose
from .grid import GridField, gradient, node_coords

FACE_TOL = 1e-12


def _kuhn_simplices(n: int):
    """Each entry: (corner offsets (n+1, n), orientation sign) for one simplex of the unit cube."""
    out = []
    for perm in itertools.permutations(range(n)):
        pts = [np.zeros(n, dtype=int)]
        for k in perm:
            nxt = pts[-1].copy()
            nxt[k] = 1
            pts.append(nxt)
        P = np.array(pts)
        sign = np.sign(np.linalg.det((P[1:] - P[0]).T.astype(float)))
        out.append((P, sign))
    return out


def _cells(region: np.ndarray) -> np.ndarray:
    """Lower corners of cells whose 2^n nodes are all in region."""
    n = region.ndim
    core = tuple(slice(0, -1) for _ in range(n))
    ok = region[core].copy()
    for corner in itertools.product((0, 1), repeat=n):
        sl = tuple(slice(c, region.shape[0] - 1 + c) for c in corner)
        ok &= region[sl]
    return np.argwhere(ok)


def _boundary_nodes(region: np.ndarray, cells: np.ndarray) -> np.ndarray:
    n = region.ndim
    N = region.shape[0]
    inner = np.zeros((N - 1,) * n, dtype=bool)
    inner[tuple(cells.T)] = True
    touched = np.zeros(region.shape, dtype=bool)
    full = np.zeros(region.shape, dtype=np.int64)
    for corner in itertools.product((0, 1), repeat=n):
        sl = tuple(slice(c, N - 1 + c) for c in corner)
        touched[sl] |= inner
        full[sl] += inner.astype(np.int64)
    # a node is interior iff all 2^n cells around it are in the complex
    return touched & (full < 2**n)


def degree_at(w: GridField, region: np.ndarray, xi, clearance_factor: float = 2.0) -> int:
    xi = np.asarray(xi, dtype=float)
    n, h = w.n, w.h
    region = region & w.mask
    cells = _cells(region)
    vals = w.values
    bnodes = _boundary_nodes(region, cells)
    Dw = gradient(w, region)
    lip = float(np.max(np.linalg.norm(Dw[region], ord=2, axis=(-2, -1)))) if region.any() else 0.0
    if bnodes.any():
        gap = float(np.min(np.linalg.norm(vals[bnodes] - xi, axis=1)))
        if gap <= clearance_factor * lip * h:
            raise BoundaryTooClose(f"target within {gap:.3e} of the boundary image (limit {clearance_factor * lip * h:.3e})")
    simplices = _kuhn_simplices(n)
    step = 1e-7 * h * np.arange(1, n + 1)
    for attempt in range(8):
        target = xi + attempt * step
        total = 0
        on_face = False
        for P, s_src in simplices:
            W = np.stack([vals[tuple((cells + P[k]).T)] for k in range(n + 1)], axis=1)  # (c, n+1, n)
            T = np.transpose(W[:, 1:, :] - W[:, :1, :], (0, 2, 1))
            det = np.linalg.det(T)
            live = np.abs(det) > 1e-300
            rhs = (target[None, :] - W[:, 0, :])[live]
            lam = np.linalg.solve(T[live], rhs[..., None])[..., 0]
            lam0 = 1.0 - lam.sum(axis=1)
            allc = np.column_stack([lam0, lam])
            inside = np.all(allc >= -FACE_TOL, axis=1)
            if np.any(inside & np.any(np.abs(allc) <= FACE_TOL, axis=1)):
                on_face = True
                break
            total += int(s_src * np.sum(np.sign(det[live][inside])))
        if not on_face:
            return total
    raise BoundaryTooClose("target stays on simplex faces after perturbation")
