"""Acceptance runs. Each ``case_k`` returns a JSON-able report with a
boolean ``passed`` and the measured quantities; wall time is kept out of
the report so reruns can be compared byte for byte.

``python acceptance_cases.py [k ...]`` prints the reports as JSON.
"""

import json
import math
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent))

from multiwell import linalg_core as lc
from multiwell import registration as rg
from multiwell import well_structure as ws
from multiwell.errors import MultiwellError
from multiwell.fields import analysis as an
from multiwell.fields.degree import degree_at
from multiwell.fields.generators import gen
from multiwell.fields.grid import differentiate, dumps, from_function, interpolate, interpolate_gradient
from multiwell.fields.scaling import scaling_experiment
from multiwell.fields.truncation import lipschitz_truncate
from multiwell.parallel import stream
from oracles import angle_grid_distance, rotation_from_angles

DIAG21 = np.diag([2.0, 1.0])


def _positive_matrix(rng, n, spread=0.4):
    while True:
        M = np.eye(n) + spread * rng.standard_normal((n, n))
        if np.linalg.det(M) > 0.2:
            return M


# ------------------------------------------------------------------ 1

def case_1():
    worst = 0.0
    for k in range(200):
        rng = stream(1, k)
        A = _positive_matrix(rng, 2)
        M = 1.5 * rng.standard_normal((2, 2))
        d, _ = lc.dist_to_well(M, A)
        worst = max(worst, abs(d - angle_grid_distance(M, A, samples=20001)))
    return {"cases": 200, "max_abs_error": worst, "passed": bool(worst <= 1e-6)}


# ------------------------------------------------------------------ 2

def case_2():
    found = 0
    recon = jump = orbit = 0.0
    total = 0
    for k in range(200):
        rng = stream(2, k)
        n = 2 + k % 2
        B = _positive_matrix(rng, n)
        Binv = np.linalg.inv(B)
        while True:
            a = rng.standard_normal(n)
            b = rng.standard_normal(n)
            b *= rng.uniform(0.3, 1.0) / (np.linalg.norm(a) * np.linalg.norm(b))
            if 1.0 + b @ Binv @ a > 0.2:
                break
        A = lc.random_rotation(rng, n) @ (B + np.outer(a, b))
        total += 1
        conn = ws.rank1_connect(A, B)
        if conn is None or not (np.any(conn[0]) or np.any(conn[1])):
            continue
        found += 1
        p, q = conn
        recon = max(recon, float(np.linalg.norm(np.outer(p, p) - np.outer(q, q) - (A.T @ A - B.T @ B))))
        X, Y, wa, wb = ws.rank1_witness(A, B)
        sv = np.linalg.svd(X - Y, compute_uv=False)
        jump = max(jump, float(np.linalg.norm(X - Y - np.outer(wa, wb))), float(sv[1]))
        orbit = max(orbit, lc.dist_to_well(X, A)[0], lc.dist_to_well(Y, B)[0])
    ok = found == total and recon <= 1e-8 and jump <= 1e-8 and orbit <= 1e-8
    return {
        "pairs": total,
        "recall": found / total,
        "max_reconstruction": recon,
        "max_rank1_jump": jump,
        "max_orbit_distance": orbit,
        "passed": bool(ok),
    }


# ------------------------------------------------------------------ 3

def case_3():
    certified = agree = wells = 0
    min_margin = math.inf
    for n in (2, 3):
        for k in range(100):
            rng = stream(3, n, k)
            K = ws.WellFamily([_positive_matrix(rng, n), _positive_matrix(rng, n)])
            for i in range(2):
                wells += 1
                ok_any = False
                same = True
                for which in ("H1", "H2"):
                    exact = ws.two_well_exact(K, i, which)
                    search = ws.verify_hypothesis(K, i, which, seed=k, n_samples=4000)
                    same &= (exact is None) == (search is None)
                    if exact is not None:
                        ok_any = True
                        min_margin = min(min_margin, exact.margin)
                certified += ok_any
                agree += same
    return {
        "wells": wells,
        "certified": certified,
        "sign_agreement": agree,
        "min_exact_margin": min_margin,
        "passed": bool(certified == wells and agree == wells),
    }


# ------------------------------------------------------------------ 4

def bump_chain(seed, n):
    """Wells A_0 = I, A_{k+1} = Q_k (A_k + a b^T) with random rotations Q_k."""
    rng = np.random.default_rng(seed)
    wells = [np.eye(n)]
    for _ in range(n - 1):
        a = rng.standard_normal(n)
        b = rng.standard_normal(n)
        J = 0.5 * np.outer(a, b) / (np.linalg.norm(a) * np.linalg.norm(b))
        M = wells[-1] + J
        if np.linalg.det(M) < 0.2:
            M = wells[-1] - J
        wells.append(rotation_from_angles(rng, n) @ M)
    return ws.WellFamily(wells)


def case_4():
    chains = generic = 0
    min_margin = math.inf
    max_rel = 0.0
    failures = []
    for n in (2, 3):
        for k in range(25):
            K = bump_chain(4000 + 100 * n + k, n)
            chains += 1
            edges = [(i, j) for i in range(n) for j in range(i + 1, n) if ws.connection(K, i, j) is not None]
            tree = ws.spanning_tree(n, edges)
            vectors = ws.tree_vectors(K, tree)
            if not ws.is_generic([x for pq in vectors for x in pq], n):
                failures.append([n, k, "not generic"])
                continue
            generic += 1
            try:
                dirs = ws.separating_directions(K, tree, vectors)
            except MultiwellError as e:
                failures.append([n, k, type(e).__name__])
                continue
            for i, d in enumerate(dirs):
                if d is None or not d.margin > 0:
                    failures.append([n, k, f"well {i} uncertified"])
                    continue
                direct = ws.evaluate_margin(K, i, d.v, "H1")
                min_margin = min(min_margin, d.margin)
                max_rel = max(max_rel, abs(direct - d.margin) / d.margin)
                if not direct > 0:
                    failures.append([n, k, f"well {i} direct margin {direct}"])
    ok = not failures and generic == chains and max_rel <= 1e-8
    return {
        "chains": chains,
        "generic": generic,
        "min_margin": min_margin,
        "max_margin_rel_diff": max_rel,
        "failures": failures,
        "passed": bool(ok),
    }


# ------------------------------------------------------------------ 5

def _random_simplex(rng, n, min_b=0.05):
    while True:
        z = rng.standard_normal((n + 1, n))
        z /= np.maximum(np.linalg.norm(z, axis=1, keepdims=True), 1.0)
        z *= rng.uniform(0.5, 1.0, (n + 1, 1))
        if rg.inscribed_ball(z)[1] > min_b:
            return z


def _correspondence(rng, z, A, eps):
    Q = lc.random_rotation(rng, A.shape[0])
    eta = rng.standard_normal(z.shape)
    eta *= eps / np.linalg.norm(eta, axis=1, keepdims=True)
    return rg.PointCorrespondence(z, z @ (Q @ A).T + rng.standard_normal(A.shape[0]) + eta, A)


def case_5():
    zero = 0.0
    for k in range(100):
        rng = stream(5, k)
        n = 2 + k % 2
        A = _positive_matrix(rng, n, 0.2)
        z = _random_simplex(rng, n)
        zero = max(zero, rg.recover_orthogonal_affine(_correspondence(rng, z, A, 0.0))[1])
    eps = 10.0 ** -np.arange(1, 7)
    slopes = {}
    for n in (2, 3):
        worst = []
        for e_i, e in enumerate(eps):
            w = 0.0
            for k in range(30):
                rng = stream(50, n, k)
                A = _positive_matrix(rng, n, 0.2)
                z = _random_simplex(rng, n, 0.1)
                w = max(w, rg.recover_orthogonal_affine(_correspondence(stream(51, n, e_i, k), z, A, e))[1])
            worst.append(w)
        slopes[str(n)] = float(np.polyfit(np.log(eps), np.log(worst), 1)[0])
    ok = zero <= 1e-9 and all(0.9 <= s <= 1.1 for s in slopes.values())
    return {"max_zero_noise_residual": zero, "slopes": slopes, "passed": bool(ok)}


# ------------------------------------------------------------------ 6

def case_6():
    out = {}
    ok = True
    for p in (1.0, 2.0):
        r = scaling_experiment({"p": p})
        ratios = [row["energy_ratio"] for row in r.rows]
        good = r.slope is not None and abs(r.slope - 1.0 / p) <= 0.15 and all(row["energy_ok"] for row in r.rows)
        ok &= good
        out[f"p={p:g}"] = {
            "slope": r.slope,
            "target": 1.0 / p,
            "energy_ratios": ratios,
            "under_resolved": [row["under_resolved"] for row in r.rows],
            "passed": bool(good),
        }
    out["passed"] = bool(ok)
    return out


# ------------------------------------------------------------------ 7

SWEEP_WIDTH = 1.0 / 16.0
# a fitted constant is the first setting's ratio times this allowance
ALLOWANCE = 2.0


def case_7():
    K = ws.WellFamily([DIAG21, np.eye(2)])
    rows = []
    for P in (1.0, 0.5, 0.25):
        f = gen("laminate", {"i": 0, "j": 1, "theta": 0.1, "period": P, "mollify_width": SWEEP_WIDTH}, N=129, wells=K)
        a = an.energy(f, K, SWEEP_WIDTH, 1.0, 1.0).total
        m = an.majority_phase(f, K)
        rows.append({
            "period": P,
            "a_meas": a,
            "index": m.index,
            "per_over_a": m.perimeter / a,
            "vol_over_a2": m.complement_volume / a**2,
        })
    c_per = ALLOWANCE * rows[0]["per_over_a"]
    c_vol = ALLOWANCE * rows[0]["vol_over_a2"]
    ok = all(r["per_over_a"] <= c_per and r["vol_over_a2"] <= c_vol and r["index"] == 1 for r in rows)
    # the detector on fields whose phase is known by construction
    checks = []
    for theta, want in ((0.8, 0), (0.2, 1)):
        f = gen("laminate", {"i": 0, "j": 1, "theta": theta, "period": 0.5, "mollify_width": SWEEP_WIDTH}, N=129, wells=K)
        checks.append(an.majority_phase(f, K).index == want)
    for A, want in ((DIAG21, 0), (np.eye(2), 1)):
        f = gen("affine", {"R": lc.rotation2(0.4) @ A}, N=65, n=2)
        checks.append(an.majority_phase(f, K).index == want)
    ok = ok and all(checks)
    return {"rows": rows, "C_per": c_per, "C_vol": c_vol, "index_checks": checks, "passed": bool(ok)}


# ------------------------------------------------------------------ 8

def _squaring(X):
    x, y = X[:, 0], X[:, 1]
    return np.column_stack([x * x - y * y, 2 * x * y])


def case_8():
    K = ws.WellFamily([DIAG21, np.eye(2)])
    rng = stream(8, 0)
    g = rng.standard_normal((32, 2))
    pts = 0.5 * g / np.linalg.norm(g, axis=1, keepdims=True) * np.sqrt(rng.uniform(size=32))[:, None]
    R = lc.rotation2(0.7) @ np.array([[1.2, 0.3], [0.0, 0.9]])
    fields = {
        "affine": gen("affine", {"R": R, "t": [0.1, -0.2]}, N=65, n=2),
        "laminate": gen("laminate", {"i": 0, "j": 1, "theta": 0.5, "period": 0.25, "mollify_width": SWEEP_WIDTH}, N=129, wells=K),
    }
    degrees = {}
    for name, f in fields.items():
        targets = interpolate(f.values, pts)
        degrees[name] = [degree_at(f, f.mask, xi) for xi in targets]
    sq = from_function(_squaring, 2, 65)
    degrees["squaring"] = [degree_at(sq, sq.mask, np.array([0.1, 0.0]))]
    ok = all(d == 1 for d in degrees["affine"] + degrees["laminate"]) and degrees["squaring"] == [2]
    return {"degrees": degrees, "passed": bool(ok)}


# ------------------------------------------------------------------ 9

LAM = 4.0


def spike_field(lam, height, width, N=129):
    c = np.array([0.2, -0.1])

    def u(X):
        g = np.exp(-np.sum((X - c) ** 2, axis=1) / (2 * width**2))
        # peak |d/dx1| of the bump term is height
        return X + np.outer(g, [1.0, 0.0]) * (height * width * math.sqrt(math.e))

    return from_function(u, 2, N)


def case_9():
    rows = []
    for width in (0.05, 0.03, 0.08):
        for mult in (5.0, 10.0, 15.0):
            f = spike_field(LAM, mult * LAM, width)
            r = lipschitz_truncate(f, LAM)
            st = r.stats
            rows.append({
                "width": width,
                "height": mult * LAM,
                "lip_over_lam": st["lip_w"] / LAM,
                "diff_over_tail": st["grad_diff_q"] / st["tail_int"],
                "E_over_tail": st["E_measure"] / st["tail_q"],
                "unchanged_off_E": bool(np.array_equal(r.w.values[r.good], f.values[r.good])),
            })
    calib = [r for r in rows if r["width"] == 0.05]
    c_lip = math.sqrt(2.0) * math.sqrt(2.0)
    c_diff = 4.0 * max(r["diff_over_tail"] for r in calib)
    c_E = 4.0 * max(r["E_over_tail"] for r in calib)
    ok = all(
        r["lip_over_lam"] <= c_lip * (1 + 1e-9)
        and r["diff_over_tail"] <= c_diff
        and r["E_over_tail"] <= c_E
        and r["unchanged_off_E"]
        for r in rows
    )
    empty = []
    for R in (np.eye(2), lc.rotation2(0.3) @ np.diag([1.5, 0.5])):
        f = gen("affine", {"R": R}, N=65, n=2)
        Du, _ = differentiate(f)
        lam = float(np.max(np.linalg.norm(Du[f.mask], axis=(-2, -1))))
        t = lipschitz_truncate(f, lam * (1 + 1e-12))
        empty.append(bool(not t.E.any() and t.w.values.tobytes() == f.values.tobytes()))
    ok = ok and all(empty)
    return {"rows": rows, "C_lip": c_lip, "C_diff": c_diff, "C_E": c_E, "empty_E": empty, "passed": bool(ok)}


# ------------------------------------------------------------------ 10

def case_10():
    K = ws.WellFamily([DIAG21, np.eye(2)])
    f = gen("laminate", {"i": 0, "j": 1, "theta": 0.8, "period": 0.25, "mollify_width": SWEEP_WIDTH}, N=129, wells=K)
    R = np.asarray(f.meta["X"]).reshape(2, 2)
    lmap = rg.AffineMap(R, np.zeros(2))
    rows = []
    tries = 0
    while len(rows) < 50:
        rng = stream(10, tries)
        tries += 1
        c = rng.uniform(-0.3, 0.3, 2)
        L = rng.uniform(0.2, 0.45)
        w = rng.uniform(0.05, 0.15)
        V = c + np.array([[-L, -w], [L, -w], [rng.uniform(-0.8, 0.8) * L, w]])
        if np.any(np.linalg.norm(V, axis=1) > 0.95):
            continue
        lam = rng.dirichlet(np.full(3, 4.0))
        x = lam @ V
        if min(ws.shrink_margin(K, 0, x - xi) for xi in V) <= 0:
            continue
        taus, vs, G = [], [], []
        for li, xi in zip(lam, V):
            taus.append((x - xi) / np.linalg.norm(x - xi))
            vs.append(li * R @ (x - xi))
            pts, _ = an.segment_nodes(xi, x, f.h)
            G.append(interpolate_gradient(f.values, pts))
        c1, c2 = ws.majorization_constants(K, 0, np.array(taus), np.array(vs), R, seed=tries, n_samples=20000, extra=np.concatenate(G))
        r = an.ibp_simplex_check(f, K, 0, V, x, lmap, c1, c2)
        rows.append({"identity_error": r.identity_error, "margin": r.margin, "c1": c1, "c2": c2})
    ident = max(r["identity_error"] for r in rows)
    margin = min(r["margin"] for r in rows)
    return {
        "placements": len(rows),
        "tries": tries,
        "max_identity_error": ident,
        "min_margin": margin,
        "passed": bool(ident <= 1e-3 and margin >= 0),
    }


# ------------------------------------------------------------------ 11

def case_11():
    K = ws.WellFamily([DIAG21, np.eye(2)])
    eps = SWEEP_WIDTH
    rows = []
    C = None
    for P, theta in ((0.25, 0.2), (0.5, 0.1), (1.0, 0.05)):
        f = gen("laminate", {"i": 0, "j": 1, "theta": theta, "period": P, "mollify_width": SWEEP_WIDTH}, N=129, wells=K)
        a = an.energy(f, K, SWEEP_WIDTH, 1.0, 1.0).total
        if C is None:
            C = an.pair_statistics(f, K, 1, eps, 1.0, n_pairs=20000, seed=11).median_abs / eps
        st = an.pair_statistics(f, K, 1, eps, C, n_pairs=20000, seed=11)
        rows.append({"period": P, "theta": theta, "a_meas": a, "violating_fraction": st.violating_fraction})
    a_dec = all(x["a_meas"] > y["a_meas"] for x, y in zip(rows, rows[1:]))
    v_dec = all(x["violating_fraction"] > y["violating_fraction"] for x, y in zip(rows, rows[1:]))
    aff = gen("affine", {"R": lc.rotation2(0.3) @ np.eye(2)}, N=129, n=2)
    s = an.pair_values(aff, np.eye(2), 20000, 11, 1.0 - 2.0 * aff.h)
    affine_max = float(np.max(np.abs(s)))
    return {
        "C": C,
        "rows": rows,
        "a_decreasing": a_dec,
        "violating_decreasing": v_dec,
        "affine_max_abs_s": affine_max,
        "passed": bool(a_dec and v_dec and affine_max <= 1e-8),
    }


CASES = {k: globals()[f"case_{k}"] for k in range(1, 12)}

DESCRIPTIONS = {
    1: "Procrustes distance vs angle-grid oracle, 200 cases, 1e-6",
    2: "rank-1 round trip, 200 pairs, recall 100%, 1e-8",
    3: "two-well dichotomy, 100 pairs each in n=2,3",
    4: "spanning-tree directions on 25 generic chains per n",
    5: "affine recovery: zero noise 1e-9, slope in [0.9, 1.1]",
    6: "lamina scaling slope 1/p +- 0.15, energy within x3",
    7: "majority phase perimeter and volume bounds over three settings",
    8: "degree 1 on 32 inner targets, squaring map 2",
    9: "truncation conclusions on the spike suite",
    10: "integration-by-parts identity 1e-3 and margin >= 0 on 50 simplices",
    11: "pair violating fraction decreases with energy, affine s = 0",
    12: "reports identical under MRL_THREADS 1 and 4",
}


def report_json(k):
    return dumps(CASES[k]())


if __name__ == "__main__":
    keys = [int(a) for a in sys.argv[1:]] or list(CASES)
    print(json.dumps({str(k): report_json(k) for k in keys}))
