import math

import numpy as np
import pytest

from multiwell.errors import BadParams, BoundaryTooClose, EmptyGoodSet
from multiwell.fields.degree import degree_at
from multiwell.fields.generators import gen
from multiwell.fields.grid import GridField, ball_mask, differentiate, from_function
from multiwell.fields.truncation import lipschitz_truncate, maximal_function, neighbour_lipschitz
from oracles import winding_number


def spike_field(lam, height, width, N=129):
    c = np.array([0.2, -0.1])

    def u(X):
        g = np.exp(-np.sum((X - c) ** 2, axis=1) / (2 * width**2))
        # peak |d/dx1| of the bump term is height
        return X + np.outer(g, [1.0, 0.0]) * (height * width * math.sqrt(math.e))

    return from_function(u, 2, N)


def squaring(X):
    x, y = X[:, 0], X[:, 1]
    return np.column_stack([x * x - y * y, 2 * x * y])


def test_maximal_function_of_constant():
    m = ball_mask(2, 33)
    M = maximal_function(np.full(m.shape, 3.0), m, 2 / 32)
    assert np.allclose(M[m], 3.0)
    assert np.all(M[~m] == 0)


def test_maximal_function_dominates_values():
    rng = np.random.default_rng(0)
    m = ball_mask(2, 33)
    g = rng.uniform(0, 1, m.shape)
    M = maximal_function(g, m, 2 / 32, r_max=0.5)
    # the r = h ball holds the node and its 4 neighbours, so M >= g / 5
    assert np.all(M[m] >= g[m] / 5 - 1e-12)
    assert np.all(M[m] <= g[m].max() + 1e-12)


def test_no_truncation_below_level():
    f = gen("affine", {"R": [[1.0, 0.2], [0.0, 1.0]]}, N=65)
    Du, _ = differentiate(f)
    lam = 10 * float(np.max(np.linalg.norm(Du[f.mask], axis=(-2, -1))))
    r = lipschitz_truncate(f, lam)
    assert not r.E.any()
    assert r.w.values.tobytes() == f.values.tobytes()
    lam = 1.01 * float(np.max(np.linalg.norm(Du[f.mask], axis=(-2, -1))))
    assert not lipschitz_truncate(f, lam).E.any()


def test_spike_truncation():
    lam = 4.0
    f = spike_field(lam, 10 * lam, 0.05)
    r = lipschitz_truncate(f, lam)
    st = r.stats
    assert r.E.any()
    # the spike centre is bad, the far background good
    assert r.E[int(round((0.2 + 1) * 64)), int(round((-0.1 + 1) * 64))]
    assert r.good[64, 120]
    assert st["lip_w"] <= math.sqrt(2) * math.sqrt(2) * lam * (1 + 1e-9)
    assert np.array_equal(r.w.values[r.good], f.values[r.good])
    assert np.all(r.maximal[r.E] > lam)
    assert st["E_measure"] <= 4 * st["tail_q"]
    assert st["E_dilated_measure"] >= st["E_measure"]


def test_truncation_needs_a_good_node():
    f = gen("affine", {"R": 5 * np.eye(2)}, N=33)
    with pytest.raises(EmptyGoodSet):
        lipschitz_truncate(f, 1.0)
    with pytest.raises(BadParams):
        lipschitz_truncate(f, 0.0)


def test_neighbour_lipschitz_of_linear_map():
    f = gen("affine", {"R": [[2.0, 0.0], [0.0, 0.5]]}, N=33)
    assert neighbour_lipschitz(f.values, f.mask, f.h) == pytest.approx(2.0)


def test_degree_identity():
    f = from_function(lambda X: X, 2, 33)
    assert degree_at(f, f.mask, np.zeros(2)) == 1
    g = from_function(lambda X: X, 3, 17)
    assert degree_at(g, g.mask, np.array([0.05, -0.02, 0.01])) == 1


def test_degree_affine_rotation():
    R = np.array([[0.0, -1.2], [1.2, 0.0]])
    f = from_function(lambda X: X @ R.T + 0.1, 2, 33)
    assert degree_at(f, f.mask, R @ [0.2, 0.3] + 0.1) == 1


def test_degree_reflection():
    f = from_function(lambda X: X * np.array([1.0, -1.0]), 2, 33)
    assert degree_at(f, f.mask, np.array([0.1, 0.05])) == -1


def test_degree_squaring_map():
    f = from_function(squaring, 2, 65)
    assert degree_at(f, f.mask, np.array([0.1, 0.0])) == 2
    # winding number of the boundary image around the target agrees
    th = np.linspace(0, 2 * np.pi, 2000, endpoint=False)
    circle = np.column_stack([np.cos(th), np.sin(th)])
    assert winding_number(squaring(circle) - np.array([0.1, 0.0])) == 2


def test_degree_outside_image_is_zero():
    f = from_function(lambda X: 0.5 * X, 2, 33)
    assert degree_at(f, f.mask, np.array([0.9, 0.0])) == 0


def test_degree_boundary_too_close():
    f = from_function(lambda X: X, 2, 33)
    with pytest.raises(BoundaryTooClose):
        degree_at(f, f.mask, np.array([0.99, 0.0]))


def test_degree_homotopy_stable():
    f = from_function(squaring, 2, 65)
    xi = np.array([0.1, 0.0])
    base = degree_at(f, f.mask, xi)
    # boundary clearance of the squaring map around xi is about 0.9
    rng = np.random.default_rng(7)
    for _ in range(10):
        P = rng.standard_normal(f.values.shape)
        P *= 0.2 / np.max(np.linalg.norm(P, axis=-1))
        smooth = np.stack([np.sin(3 * f.coords()[..., 0] + P[0, 0, 0]), np.cos(2 * f.coords()[..., 1] + P[0, 0, 1])], -1)
        g = GridField(f.values + 0.2 * smooth, {})
        assert degree_at(g, g.mask, xi) == base
