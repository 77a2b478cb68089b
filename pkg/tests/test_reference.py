import io
from fractions import Fraction

import numpy as np
import pytest
import sympy
from hypothesis import given, settings, strategies as st

from sbpsat.errors import ConfigurationError, DomainError
from sbpsat.reference import (
    DEGREES, FAMILIES, NODE_COUNTS, REFERENCE, BasisEvaluator, collapsed_cubature,
    evaluate_basis, evaluate_basis_gradient, face_cubature, monomial_exponents,
    read_cubature_table, required_degree, simplex_moment, volume_cubature,
    write_cubature_table)

from conftest import CASES

X, Y = sympy.symbols("x y")


def sympy_moment(a, b):
    return sympy.integrate(sympy.integrate(X**a * Y**b, (Y, 0, 1 - X)), (X, 0, 1))


def test_constant_basis_value():
    V = evaluate_basis(BasisEvaluator(0), np.array([[0.2, 0.3], [0.0, 0.0], [0.5, 0.5]]))
    assert V.shape == (3, 1)
    np.testing.assert_allclose(V, np.sqrt(2.0), rtol=1e-14)


def test_constant_basis_gradient_vanishes():
    Vx, Vy = evaluate_basis_gradient(BasisEvaluator(2), np.array([[0.1, 0.2], [0.3, 0.3]]))
    np.testing.assert_allclose(Vx[:, 0], 0.0, atol=1e-14)
    np.testing.assert_allclose(Vy[:, 0], 0.0, atol=1e-14)


@pytest.mark.parametrize("p", range(5))
def test_basis_is_orthonormal(p):
    deg = 2 * p
    pts, w = collapsed_cubature(deg)
    V = evaluate_basis(BasisEvaluator(p), pts)
    np.testing.assert_allclose(V.T @ (w[:, None] * V), np.eye(V.shape[1]), atol=1e-12)


@pytest.mark.parametrize("p", range(1, 5))
def test_basis_gradient_matches_finite_difference(p):
    basis = BasisEvaluator(p)
    pt = np.array([[0.21, 0.33]])
    eps = 1e-6
    Vx, Vy = evaluate_basis_gradient(basis, pt)
    fx = (evaluate_basis(basis, pt + [eps, 0]) - evaluate_basis(basis, pt - [eps, 0])) / (2 * eps)
    fy = (evaluate_basis(basis, pt + [0, eps]) - evaluate_basis(basis, pt - [0, eps])) / (2 * eps)
    np.testing.assert_allclose(Vx, fx, atol=1e-7)
    np.testing.assert_allclose(Vy, fy, atol=1e-7)


def test_point_outside_raises():
    with pytest.raises(DomainError):
        evaluate_basis(BasisEvaluator(1), np.array([[0.8, 0.8]]))


def test_negative_degree_raises():
    with pytest.raises(ConfigurationError):
        BasisEvaluator(-1)


@pytest.mark.parametrize("a,b", [(0, 0), (1, 0), (2, 3), (4, 1), (0, 7)])
def test_simplex_moment_matches_sympy(a, b):
    assert simplex_moment(a, b) == Fraction(str(sympy_moment(a, b)))


def test_omega_p1_rule():
    cub = volume_cubature("omega", 1)
    assert cub.size == 3
    assert cub.degree >= 2
    assert np.isclose(cub.weights.sum(), 0.5, atol=1e-15)
    assert np.all(REFERENCE.barycentric(cub.points) > 1e-8)


def test_gamma_p2_has_three_nodes_per_face():
    cub = volume_cubature("gamma", 2)
    assert cub.size == 7
    lam = REFERENCE.barycentric(cub.points)
    # reference face i lies opposite vertex (i + 2) % 3
    for f in range(3):
        on = np.abs(lam) < 1e-12
        assert np.sum(on[:, (f + 2) % 3]) == 3


@pytest.mark.parametrize("family,p", CASES)
def test_rule_moments_against_sympy(family, p):
    cub = volume_cubature(family, p)
    assert cub.size == NODE_COUNTS[family][p - 1]
    assert cub.degree >= required_degree(family, p)
    assert np.all(cub.weights > 0)
    assert np.all(REFERENCE.barycentric(cub.points) > -1e-14)
    for a, b in monomial_exponents(cub.degree):
        exact = float(sympy_moment(a, b))
        approx = cub.integrate(cub.points[:, 0] ** a * cub.points[:, 1] ** b)
        assert abs(approx - exact) < 1e-14


@pytest.mark.parametrize("family,p", CASES)
def test_x_moment(family, p):
    cub = volume_cubature(family, p)
    assert abs(cub.integrate(cub.points[:, 0]) - 1.0 / 6.0) < 1e-15


@pytest.mark.parametrize("family,p", CASES)
def test_rule_is_symmetric_under_vertex_permutation(family, p):
    cub = volume_cubature(family, p)
    lam = REFERENCE.barycentric(cub.points)
    key = sorted(zip(np.round(lam[:, 0], 10), np.round(lam[:, 1], 10), np.round(cub.weights, 12)))
    for perm in ([1, 2, 0], [1, 0, 2]):
        mapped = lam[:, perm]
        other = sorted(zip(np.round(mapped[:, 0], 10), np.round(mapped[:, 1], 10),
                           np.round(cub.weights, 12)))
        assert key == other


def test_unsupported_rule_raises():
    with pytest.raises(ConfigurationError):
        volume_cubature("omega", 5)
    with pytest.raises(ConfigurationError):
        volume_cubature("delta", 1)
    with pytest.raises(ConfigurationError):
        face_cubature(0)


def test_face_rule_p1():
    rule = face_cubature(1)
    assert rule.size == 2
    assert rule.weights[0] == rule.weights[1]
    assert np.isclose(rule.weights.sum(), 1.0)


@pytest.mark.parametrize("p", DEGREES)
def test_face_rule_exactness_and_mirror_symmetry(p):
    rule = face_cubature(p)
    for k in range(2 * p + 2):
        assert abs(rule.weights @ rule.points**k - 1.0 / (k + 1)) < 1e-15
    np.testing.assert_allclose(rule.points, 1.0 - rule.points[::-1], atol=1e-16)
    np.testing.assert_array_equal(rule.weights, rule.weights[::-1])


@pytest.mark.parametrize("family,p", CASES)
def test_table_round_trip(family, p):
    cub = volume_cubature(family, p)
    buf = io.StringIO()
    write_cubature_table(buf, cub)
    back = read_cubature_table(buf.getvalue())
    np.testing.assert_array_equal(back.points, cub.points)
    np.testing.assert_array_equal(back.weights, cub.weights)
    assert (back.family, back.p, back.degree) == (family, p, cub.degree)


def test_table_node_count_mismatch():
    buf = io.StringIO()
    write_cubature_table(buf, volume_cubature("omega", 1))
    text = buf.getvalue().replace("nodes 3", "nodes 4")
    with pytest.raises(ConfigurationError):
        read_cubature_table(text)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(FAMILIES), st.sampled_from(DEGREES),
       st.lists(st.floats(-1, 1), min_size=15, max_size=15))
def test_rule_integrates_random_polynomials(family, p, coef):
    """Any polynomial up to the rule degree is integrated exactly."""
    cub = volume_cubature(family, p)
    exps = monomial_exponents(cub.degree)
    coef = np.resize(np.array(coef), len(exps))
    exact = sum(c * float(simplex_moment(a, b)) for c, (a, b) in zip(coef, exps))
    vals = sum(c * cub.points[:, 0] ** a * cub.points[:, 1] ** b for c, (a, b) in zip(coef, exps))
    assert abs(cub.integrate(vals) - exact) < 1e-13
