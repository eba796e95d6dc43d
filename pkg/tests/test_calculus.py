import math

import numpy as np
import pytest

from frechetkit.calculus import (
    Ball,
    MCMap,
    catalog_map,
    catalog_names,
    compose_maps,
    differential,
    directional_derivative,
    inverse_map,
    mc_smoothness_probe,
    register_map,
    second_differential,
)
from frechetkit.errors import DomainError
from frechetkit.frechet_core import GradedVector, default_space
from frechetkit.lipschitz_ops import FiniteMatrix, Shift

F = default_space()


def v(*c):
    return GradedVector(tuple(float(x) for x in c))


def test_identity_derivative():
    P = MCMap.identity(3)
    h = v(0.5, -2, 1)
    assert directional_derivative(P, v(1, 1, 1), h).value == h


def test_square_derivative_example():
    P = MCMap.from_expressions(["x1^2", "x2"])
    d = directional_derivative(P, v(1, 1), v(1, 0)).value
    assert (d - v(2, 0)).sup_abs() <= 1e-8


def test_affine_map_difference_quotient():
    L = FiniteMatrix.from_array([[1.0, 2.0], [0.5, -1.0]])
    P = MCMap.from_linear(L, 2)
    rng = np.random.default_rng(0)
    for _ in range(10):
        p = v(*rng.normal(size=2))
        h = v(*rng.normal(size=2))
        got = directional_derivative(P, p, h).value
        assert (got - L.apply(h)).sup_abs() <= 1e-12 * (1 + L.apply(h).sup_abs())


def test_differential_of_product():
    P = MCMap.from_expressions(["x1*x2", "0"])
    expected = np.array([[2.0, 1.0], [0.0, 0.0]])
    assert np.array_equal(differential(P, v(1, 2)).dense(2), expected)
    assert np.allclose(differential(P, v(1, 2), numeric=True).dense(2), expected, atol=1e-8)
    big = differential(P, v(1, 2), degree=4, numeric=True).dense(4)
    assert np.allclose(big[2:, :], 0) and np.allclose(big[:, 2:], 0)


def test_differential_of_linear_map():
    P = MCMap.from_linear(Shift("right"), 3)
    assert np.allclose(differential(P, v(1, 2, 3), degree=3, numeric=True).dense(3),
                       Shift("right").dense(3), atol=1e-12)


def test_second_differential_examples():
    P = MCMap.from_expressions(["x1^2", "0"])
    e1 = v(1)
    for p in (v(0, 0), v(3, -1)):
        assert second_differential(P, p, e1, e1) == v(2)
        assert (second_differential(P, p, e1, e1, numeric=True) - v(2)).sup_abs() <= 1e-6
    A = MCMap.from_linear(FiniteMatrix.from_array([[1.0, 1.0], [0.0, 3.0]]), 2)
    assert second_differential(A, v(1, 1), v(1, 0), v(0, 1)).sup_abs() <= 1e-8


@pytest.mark.parametrize("name", ["square1", "product", "trig", "rational", "mixed3", "quintic"])
def test_analytic_and_numeric_agree(name):
    P = catalog_map(name)
    rng = np.random.default_rng(hash(name) % 2**32)
    for _ in range(5):
        p = v(*rng.uniform(-0.8, 0.8, size=P.dim_in))
        h = v(*rng.normal(size=P.dim_in))
        g = v(*rng.normal(size=P.dim_in))
        a = differential(P, p).apply(h)
        n = directional_derivative(P.without_analytic(), p, h).value
        assert (a - n).sup_abs() <= 1e-8
        s_hg = second_differential(P, p, h, g, numeric=True)
        s_gh = second_differential(P, p, g, h, numeric=True)
        assert (s_hg - s_gh).sup_abs() <= 1e-6
        assert (s_hg - second_differential(P, p, h, g)).sup_abs() <= 1e-6


def test_richardson_indicator_shrinks_with_step():
    P = catalog_map("trig").without_analytic()
    p, h = v(0.3, 0.7), v(1, -1)
    big = directional_derivative(P, p, h, t0=1e-1).error_indicator
    small = directional_derivative(P, p, h, t0=2.5e-2).error_indicator
    assert small < big / 4


def test_chain_rule():
    g, h = catalog_map("trig"), catalog_map("square1")
    gh = compose_maps(g, h)
    p, w = v(0.2, -0.4), v(0.7, 0.1)
    lhs = directional_derivative(gh.without_analytic(), p, w).value
    rhs = differential(g, h(p)).apply(differential(h, p).apply(w))
    assert (lhs - rhs).sup_abs() <= 1e-7
    assert (differential(gh, p).apply(w) - rhs).sup_abs() <= 1e-12


def test_inverse_map_derivatives():
    P = MCMap.from_expressions(["x1^3 + x1"])
    inv = inverse_map(P)
    assert abs(inv(v(2)).coord(1) - 1.0) <= 1e-15
    assert abs(differential(inv, v(2)).dense(1)[0, 0] - 0.25) <= 1e-15
    assert abs(second_differential(inv, v(2), v(1), v(1)).coord(1) + 6 / 64) <= 1e-14


def test_domain_errors():
    P = MCMap.from_expressions(["x1"], domain=Ball((0.0,), 1.0))
    with pytest.raises(DomainError):
        P(v(2))
    with pytest.raises(DomainError):
        directional_derivative(P, v(1.5), v(1))


def test_registration_rejects_non_smooth_entries():
    with pytest.raises(DomainError):
        register_map("absval", ["abs(x1)*x1"])
    with pytest.raises(DomainError):
        register_map("rough", ["x1"], smoothness=0)
    register_map("shifted_cubic", ["x1^3 - 1"])
    assert "shifted_cubic" in catalog_names()


def test_smoothness_probe_linear_and_square():
    lin = MCMap.from_linear(FiniteMatrix.from_array([[2.0, 0.0], [1.0, 1.0]]), 2)
    rep = mc_smoothness_probe(lin, Ball((0.0, 0.0), 1.0), 1, 3, seed=0, space=F)
    assert rep.passed
    assert all(m == 0.0 for row in rep.orders[1] for m in row["moduli"])
    sq = MCMap.from_expressions(["x1^2", "0"])
    rep = mc_smoothness_probe(sq, Ball((0.0, 0.0), 1.0), 1, 3, seed=0, space=F)
    assert rep.passed
    for row in rep.orders[1]:
        assert row["moduli"][-1] < row["moduli"][0]
        assert all(math.isfinite(s) for s in row["slopes"])
