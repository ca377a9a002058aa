"""Rigidity scaling: err(s) = inf_R int_{B_r} |Du - R|^p over a family of
fields indexed by the energy parameter s, with a log-log slope fit."""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np
from scipy.linalg import expm

from .. import linalg_core as lc
from ..errors import BadParams
from ..parallel import pmap
from ..well_structure import WellFamily, rank1_witness
from .analysis import energy
from .generators import gen, mollified_step
from .grid import ball_mask, differentiate, spacing

DEFAULTS: dict[str, Any] = {
    "family": "lamina",
    "n": 2,
    "wells": [[1.0, 1.0, 0.0, 1.0], [1.0, 0.0, 0.0, 1.0]],
    "i": 0,
    "j": 1,
    "t0": None,
    "alpha": 4.0,
    "offset": 0.0,
    "sigmas": [2.0**-k for k in range(4, 10)],
    "p": 1.0,
    "q": 1.0,
    "omega_radius": 0.5,
    "N": 129,
    "mollify_width": "sigma",
    "a_budget": None,
    "energy_factor": 3.0,
    "seed": 0,
}


def resolve_config(config: dict | None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    for k, v in (config or {}).items():
        if k not in DEFAULTS:
            raise BadParams(f"unknown scaling config key {k!r}")
        cfg[k] = v
    if cfg["t0"] is None:
        cfg["t0"] = 2.5 if float(cfg["p"]) == 1.0 else 0.8
    sig = [float(s) for s in cfg["sigmas"]]
    if any(b >= a for a, b in zip(sig, sig[1:])):
        raise BadParams("sigmas must be strictly decreasing")
    if cfg["family"] not in ("lamina", "pure"):
        raise BadParams("family must be 'lamina' or 'pure'")
    cfg["sigmas"] = sig
    return cfg


def _mollify_width(cfg, sigma, h):
    mw = cfg["mollify_width"]
    if mw == "sigma":
        return sigma
    if mw == "auto":
        return max(sigma, 4.0 * h)
    try:
        return float(mw)
    except (TypeError, ValueError) as e:
        raise BadParams("mollify_width must be 'sigma', 'auto' or a number") from e


def best_rotation_error(G: np.ndarray, A: np.ndarray, p: float, vol: float, iters: int = 100) -> tuple[float, np.ndarray]:
    """inf over R in SO(n)A of sum |G_k - R|^p vol; G has shape (k, n, n)."""
    Gbar = G.mean(axis=0)
    Q = lc.nearest_rotation(Gbar @ A.T)
    n = A.shape[0]

    def cost(Q):
        return float(np.sum(np.sqrt(np.sum((G - Q @ A) ** 2, axis=(1, 2))) ** p) * vol)

    best = cost(Q)
    if p == 2.0:
        return best, Q @ A
    step = 0.5
    for _ in range(iters):
        E = G - Q @ A
        nrm = np.sqrt(np.sum(E**2, axis=(1, 2)))
        wgt = p * np.maximum(nrm, 1e-12) ** (p - 2.0)
        # Euclidean gradient of the cost in Q, pulled back to the Lie algebra
        dQ = -np.einsum("k,kab->ab", wgt, E) @ A.T * vol
        W = Q.T @ dQ
        W = 0.5 * (W - W.T)
        gn = np.linalg.norm(W)
        if gn < 1e-15:
            break
        cand = Q @ expm(-step * W / gn)
        c = cost(cand)
        if c < best:
            Q, best = cand, c
        else:
            step *= 0.5
            if step < 1e-14:
                break
    return best, Q @ A


def layer_target(K: WellFamily, cfg: dict) -> float:
    """Energy of two well-separated mollified interfaces times the band's
    transverse measure; independent of s when the layer width is s."""
    n = int(cfg["n"])
    p, q = float(cfg["p"]), float(cfg["q"])
    X, Y, a, b = rank1_witness(K[int(cfg["i"])], K[int(cfg["j"])])
    r = np.linspace(-1.0, 1.0, 4001)
    dr = r[1] - r[0]
    G = mollified_step(r, 1.0)
    mats = Y[None] + G[:, None, None] * np.outer(a, b)[None]
    d, _ = lc.dist_to_family_many(mats, K.wells)
    first = float(np.trapezoid(d**p, dx=dr))
    dG = np.gradient(G, dr)
    second = float((np.linalg.norm(a) * np.linalg.norm(b)) ** q * np.trapezoid(np.abs(dG) ** q, dx=dr))
    c = float(cfg["offset"])
    if n == 2:
        trans = 2.0 * math.sqrt(max(1.0 - c * c, 0.0))
    else:
        trans = math.pi * max(1.0 - c * c, 0.0)
    return 2.0 * (first + second) * trans


@dataclass
class ScalingReport:
    rows: list
    slope: float | None
    intercept: float | None
    degenerate: bool
    omega_radius: float
    energy_target: float | None
    config: dict = field(default_factory=dict)

    def to_json(self):
        return asdict(self)


def scaling_experiment(config: dict | None = None) -> ScalingReport:
    cfg = resolve_config(config)
    n, N = int(cfg["n"]), int(cfg["N"])
    K = WellFamily([np.asarray(w, dtype=float).reshape(n, n) for w in cfg["wells"]])
    p, q = float(cfg["p"]), float(cfg["q"])
    h = spacing(N)
    omega = ball_mask(n, N, float(cfg["omega_radius"]))
    A1 = K[int(cfg["j"])] if cfg["family"] == "lamina" else K[int(cfg["i"])]

    def one(sigma):
        if cfg["family"] == "pure":
            f = gen("affine", {"R": A1}, N=N, n=n)
        else:
            t = float(cfg["t0"]) * sigma ** (1.0 / p)
            params = {
                "i": cfg["i"],
                "j": cfg["j"],
                "t": t,
                "alpha": cfg["alpha"],
                "offset": cfg["offset"],
                "mollify_width": _mollify_width(cfg, sigma, h),
            }
            f = gen("lamina", params, N=N, wells=K, strict=False)
        e = energy(f, K, sigma, p, q)
        Du, _ = differentiate(f)
        err, R = best_rotation_error(Du[omega], A1, p, f.cell_volume)
        row = {"sigma": sigma, "energy": e.to_json(), "err": err, "R": R.reshape(-1).tolist()}
        if cfg["family"] == "lamina":
            row["thickness"] = float(cfg["t0"]) * sigma ** (1.0 / p)
            row["mollify_width"] = _mollify_width(cfg, sigma, h)
            row["under_resolved"] = bool(0 < row["mollify_width"] < 4.0 * h)
        if cfg["a_budget"] is not None:
            row["over_budget"] = bool(e.total > float(cfg["a_budget"]))
        return row

    rows = pmap(one, cfg["sigmas"])
    errs = np.array([r["err"] for r in rows])
    sig = np.array(cfg["sigmas"])
    degenerate = bool(np.any(errs <= 1e-14))
    slope = intercept = None
    if not degenerate and len(rows) >= 2:
        slope, intercept = (float(c) for c in np.polyfit(np.log(sig), np.log(errs), 1))
    target = None
    if cfg["family"] == "lamina":
        target = layer_target(K, cfg)
        for r in rows:
            ratio = r["energy"]["total"] / target
            r["energy_ratio"] = ratio
            fac = float(cfg["energy_factor"])
            r["energy_ok"] = bool(1.0 / fac <= ratio <= fac)
    return ScalingReport(rows, slope, intercept, degenerate, float(cfg["omega_radius"]), target, cfg)
