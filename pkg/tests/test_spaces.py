from math import factorial

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vefem import mms
from vefem.mesh import TriMesh, build_crisscross
from vefem.spaces import (FESpaces, gradient_p1, lumped_inner, lumped_weights, p2_basis,
                          quadrature, quadrature_rule)

REF = TriMesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])


def _monomial_ref(p, q):
    # integral of x^p y^q over the reference triangle
    return factorial(p) * factorial(q) / factorial(p + q + 2)


@pytest.mark.parametrize("degree", [2, 4, 6])
def test_rule_weights_positive_and_exact(degree):
    bary, w = quadrature_rule(degree)
    assert np.all(w > 0)
    assert w.sum() == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_allclose(bary.sum(axis=1), 1.0, atol=1e-15)
    pts, wts = quadrature(REF, 0, degree)
    for p in range(degree + 1):
        for q in range(degree + 1 - p):
            got = np.sum(wts * pts[:, 0] ** p * pts[:, 1] ** q)
            assert got == pytest.approx(_monomial_ref(p, q), rel=1e-13, abs=1e-16)


def test_degree4_monomial_value():
    pts, wts = quadrature(REF, 0, 4)
    assert np.sum(wts * pts[:, 0] ** 2 * pts[:, 1] ** 2) == pytest.approx(1 / 180, rel=1e-14)


def test_unsupported_degree():
    with pytest.raises(ValueError):
        quadrature_rule(3)


@pytest.mark.parametrize("degree", [2, 4, 6])
def test_rule_sums_to_element_area(degree):
    m = build_crisscross(2)
    for t in (0, 7, 31):
        _, w = quadrature(m, t, degree)
        assert w.sum() == pytest.approx(m.areas[t], rel=1e-14)


def test_degree6_matches_degree4_on_quartics():
    rng = np.random.default_rng(3)
    m = build_crisscross(1)
    for _ in range(20):
        c = rng.standard_normal((5, 5))
        f = lambda x: sum(c[i, j] * x[:, 0] ** i * x[:, 1] ** j
                          for i in range(5) for j in range(5 - i))
        for t in range(m.n_triangles):
            p4, w4 = quadrature(m, t, 4)
            p6, w6 = quadrature(m, t, 6)
            assert np.sum(w4 * f(p4)) == pytest.approx(np.sum(w6 * f(p6)), rel=1e-12, abs=1e-15)


def test_p2_basis_partition_and_nodality():
    nodes = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1],
                      [.5, .5, 0], [0, .5, .5], [.5, 0, .5]])
    np.testing.assert_allclose(p2_basis(nodes), np.eye(6), atol=1e-15)
    bary, _ = quadrature_rule(6)
    np.testing.assert_allclose(p2_basis(bary).sum(axis=1), 1.0, atol=1e-14)


def test_lumped_weights():
    m = build_crisscross(1)
    w = lumped_weights(m)
    assert np.all(w > 0)
    assert w.sum() == pytest.approx(1.0, abs=1e-14)
    centre = np.flatnonzero(np.all(np.isclose(m.vertices, [0.25, 0.25]), axis=1))[0]
    assert w[centre] == pytest.approx(1 / 12, abs=1e-15)


def test_lumped_inner_examples():
    sp_ = FESpaces(build_crisscross(2))
    w = sp_.lumped_weights
    one = np.ones(sp_.n_vertices)
    assert lumped_inner(one, one, w) == pytest.approx(1.0)
    eye = np.tile([1.0, 0.0, 1.0], (sp_.n_vertices, 1))
    assert lumped_inner(eye, eye, w) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        lumped_inner(one, one[:-1], w)


def test_lumped_inner_is_integral_of_interpolant():
    # <a, b>_h = int I_h[a b] for P1 data: degree-2 quadrature of the P1 interpolant
    rng = np.random.default_rng(0)
    sp_ = FESpaces(build_crisscross(2))
    a, b = rng.standard_normal((2, sp_.n_vertices))
    val, _ = sp_.eval_p1(a * b, 2)
    _, wq, _ = sp_.quad_points(2)
    assert lumped_inner(a, b, sp_.lumped_weights) == pytest.approx(np.sum(wq * val), rel=1e-13)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_lumped_inner_bilinear_symmetric_psd(seed):
    rng = np.random.default_rng(seed)
    sp_ = FESpaces(build_crisscross(1))
    w = sp_.lumped_weights
    a, b, c = rng.standard_normal((3, sp_.n_vertices, 3))
    s = rng.standard_normal()
    assert lumped_inner(a, b, w) == pytest.approx(lumped_inner(b, a, w), rel=1e-12, abs=1e-12)
    assert lumped_inner(a + s * c, b, w) == pytest.approx(
        lumped_inner(a, b, w) + s * lumped_inner(c, b, w), rel=1e-10, abs=1e-10)
    assert lumped_inner(a, a, w) > 0


@pytest.mark.parametrize("k", [1, 2, 3, 4, 5])
def test_norm_equivalence(k):
    rng = np.random.default_rng(k)
    sp_ = FESpaces(build_crisscross(k))
    _, wq, _ = sp_.quad_points(2)
    for _ in range(5):
        a = rng.standard_normal(sp_.n_vertices)
        val, _ = sp_.eval_p1(a, 2)
        l2 = np.sqrt(np.sum(wq * val ** 2))
        h = np.sqrt(lumped_inner(a, a, sp_.lumped_weights))
        assert 0.4 <= h / l2 <= 2.5


def test_interpolation_examples():
    sp_ = FESpaces(build_crisscross(2))
    c = sp_.interpolate_scalar(lambda x: np.full(len(x), 3.0))
    np.testing.assert_array_equal(c, 3.0)
    B = sp_.interpolate_tensor(lambda x: mms.tensor(x, 0.0))
    origin = np.flatnonzero(np.all(sp_.mesh.vertices == 0, axis=1))[0]
    np.testing.assert_allclose(B[origin], [1.05, 0.0, 0.95], atol=1e-15)
    full = sp_.interpolate_tensor(lambda x: np.broadcast_to(np.eye(2), (len(x), 2, 2)))
    np.testing.assert_array_equal(full, np.tile([1.0, 0.0, 1.0], (sp_.n_vertices, 1)))
    with pytest.raises(ValueError):
        sp_.interpolate_scalar(lambda x: np.where(x[:, 0] > 0.5, np.nan, 1.0))


def test_linear_fields_reproduced():
    sp_ = FESpaces(build_crisscross(2))
    lin = lambda x: 2 * x[:, 0] - 3 * x[:, 1] + 1
    f = sp_.interpolate_scalar(lin)
    pts, _, _ = sp_.quad_points(4)
    val, grad = sp_.eval_p1(f, 4)
    np.testing.assert_allclose(val, lin(pts.reshape(-1, 2)).reshape(val.shape), atol=1e-14)
    np.testing.assert_allclose(grad, np.broadcast_to([2.0, -3.0], grad.shape), atol=1e-12)


def test_gradient_p1():
    m = build_crisscross(2)
    np.testing.assert_allclose(gradient_p1(m, np.full(m.n_vertices, 4.0), 3), 0.0, atol=1e-13)
    for t in range(m.n_triangles):
        np.testing.assert_allclose(gradient_p1(m, m.vertices[:, 0], t), [1.0, 0.0], atol=1e-13)
    # affine-fit oracle on random data
    rng = np.random.default_rng(1)
    f = rng.standard_normal(m.n_vertices)
    for t in range(0, m.n_triangles, 5):
        p = m.vertices[m.triangles[t]]
        coef = np.linalg.solve(np.column_stack([p, np.ones(3)]), f[m.triangles[t]])
        np.testing.assert_allclose(gradient_p1(m, f, t), coef[:2], atol=1e-12)
    tens = np.column_stack([m.vertices[:, 0], m.vertices[:, 1], f])
    g = gradient_p1(m, tens, 0)
    assert g.shape == (3, 2)
    np.testing.assert_allclose(g[:2], np.eye(2), atol=1e-13)


def test_quadratic_p2_reproduction():
    sp_ = FESpaces(build_crisscross(2))
    quad = lambda x: np.column_stack([x[:, 0] ** 2 - x[:, 1], x[:, 0] * x[:, 1]])
    v = sp_.interpolate_vector_p2(quad, enforce_boundary=False)
    pts, _, _ = sp_.quad_points(6)
    val, grad = sp_.eval_p2_vector(v, 6)
    x = pts.reshape(-1, 2)
    np.testing.assert_allclose(val.reshape(-1, 2), quad(x), atol=1e-13)
    expect = np.stack([np.column_stack([2 * x[:, 0], -np.ones(len(x))]),
                       np.column_stack([x[:, 1], x[:, 0]])], axis=1)
    np.testing.assert_allclose(grad.reshape(-1, 2, 2), expect, atol=1e-12)


def test_boundary_dofs_zero():
    sp_ = FESpaces(build_crisscross(3))
    v = sp_.interpolate_vector_p2(lambda x: np.ones((len(x), 2)))
    assert np.all(v[sp_.p2_boundary] == 0.0)
    nodes = sp_.mesh.p2_nodes()
    on_bd = np.any(np.isclose(nodes, 0) | np.isclose(nodes, 1), axis=1)
    np.testing.assert_array_equal(on_bd, sp_.p2_boundary)
