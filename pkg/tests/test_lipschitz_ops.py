import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from frechetkit.errors import DomainError
from frechetkit.frechet_core import GradedVector, default_space, metric_norm, sample_dyadic
from frechetkit.lipschitz_ops import (
    Diagonal,
    DiagonalRule,
    FiniteMatrix,
    FunctionMultilinear,
    Identity,
    Scalar,
    Shift,
    TensorMultilinear,
    Zero,
    apply_linear,
    compose,
    curried_ratio,
    curry,
    difference,
    evaluation_continuity_probe,
    lip_norm_estimate,
    multilinear_norm_estimate,
    multilinear_ratio,
    op_metric,
    permute,
    random_structured_map,
    uncurry,
    witness_ratio,
)

F = default_space()


def v(*c):
    return GradedVector(tuple(float(x) for x in c))


def test_apply_examples():
    assert apply_linear(Identity(), v(1, 2)) == v(1, 2)
    assert apply_linear(Diagonal(DiagonalRule("index")), v(1, 1, 1)) == v(1, 2, 3)
    assert apply_linear(Shift("right"), v(5)) == v(0, 5)
    assert apply_linear(FiniteMatrix.from_array([[1, 2], [3, 4]]), v(1, 1, 7)) == v(3, 7)


def test_apply_rejects_foreign_vectors():
    with pytest.raises(DomainError):
        Identity().apply(GradedVector((1.0,), "G"))


def test_compose_and_shifts():
    x = v(1, -2, 3)
    assert compose(Shift("left"), Shift("right")).apply(x) == x
    H = FiniteMatrix.from_array([[0, 1], [1, 0]])
    assert compose(Identity(), H).apply(x) == H.apply(x)
    with pytest.raises(DomainError):
        compose(Identity("G"), Identity("F"))


def _dyadic_coefficients(L) -> bool:
    if isinstance(L, Diagonal):
        return L.rule.name in ("index", "values")
    for child in getattr(L, "terms", ()) + getattr(L, "factors", ()):
        if not _dyadic_coefficients(child):
            return False
    return True


def test_structured_linearity_on_dyadic_samples():
    rng = np.random.default_rng(4)
    exact = 0
    for _ in range(300):
        L = random_structured_map(rng, depth=2)
        x, y = sample_dyadic(rng, bits=6, magnitude=8), sample_dyadic(rng, bits=6, magnitude=8)
        c = float(rng.integers(-4, 5)) / 4
        lhs, rhs = L.apply(x + c * y), L.apply(x) + c * L.apply(y)
        if _dyadic_coefficients(L):
            exact += 1
            assert lhs == rhs
        else:
            assert (lhs - rhs).sup_abs() <= 1e-12 * (1 + lhs.sup_abs())
    assert exact > 100


def test_zero_and_identity_norms():
    assert lip_norm_estimate(Zero("F", "F"), F, F, 32).lower_bound == 0.0
    est = lip_norm_estimate(Identity(), F, F, 64, seed=3)
    assert est.lower_bound == 1.0 and est.estimate == 1.0


def test_scalar_two_norm_and_closed_form():
    est = lip_norm_estimate(Scalar(2.0), F, F, 64, seed=0)
    assert est.lower_bound >= 1.99
    # oracle: dense scan of s -> 2(1+s)/(1+2s) over 1e-8..1e8 stays below 2
    s = np.logspace(-8, 8, 2001)
    scan = 2 * (1 + s) / (1 + 2 * s)
    assert est.lower_bound <= scan.max() + 1e-12
    assert witness_ratio(Scalar(2.0), F, F, est.witness[0]) == est.lower_bound


def test_lower_bound_is_realized_by_witness():
    rng = np.random.default_rng(9)
    for i in range(20):
        L = random_structured_map(rng)
        est = lip_norm_estimate(L, F, F, 48, seed=i)
        assert est.lower_bound <= est.estimate
        if est.witness is not None:
            assert abs(witness_ratio(L, F, F, est.witness[0]) - est.lower_bound) <= 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 60), st.integers(1, 60))
def test_lower_bound_monotone_in_budget(seed, a, b):
    L = random_structured_map(np.random.default_rng(seed))
    lo, hi = sorted((a, b))
    assert lip_norm_estimate(L, F, F, lo, seed).lower_bound <= lip_norm_estimate(L, F, F, hi, seed).lower_bound


def test_op_metric_examples():
    L = Diagonal(DiagonalRule("geometric", (1.0, 0.5)))
    G = Shift("right")
    H = FiniteMatrix.from_array([[2.0]])
    assert op_metric(L, L, F, F).lower_bound == 0.0
    a = op_metric(L + G, H + G, F, F, 64, 1)
    b = op_metric(L, H, F, F, 64, 1)
    assert difference(L + G, H + G) == difference(L, H)
    assert (a.lower_bound, a.estimate) == (b.lower_bound, b.estimate)
    assert op_metric(Identity(), Zero("F", "F"), F, F, 64, 0).lower_bound == 1.0


def test_evaluation_continuity_probe_decays():
    pairs = evaluation_continuity_probe(Diagonal(DiagonalRule("index")), F, F, v(1, 2), v(0.3, -1, 2))
    outs = [b for _, b in pairs]
    assert outs[-1] < outs[0] and outs[-1] < 1e-9


def _bilinear():
    return TensorMultilinear(np.array([[[1.0]]]))  # B(x, y) = x1 y1 e1


def test_curry_uncurry_example():
    B = _bilinear()
    one = v(1)
    assert B.evaluate(one, one) == v(1)
    assert uncurry(curry(B)).evaluate(one, one) == v(1)
    assert curry(B).apply(one).evaluate(one) == v(1)
    with pytest.raises(DomainError):
        curry(TensorMultilinear(np.eye(2)))


def test_curry_roundtrip_is_bitwise_and_witness_transfers():
    rng = np.random.default_rng(11)
    for i in range(10):
        B = TensorMultilinear(rng.normal(size=(3, 2, 3, 2)))
        xs = [GradedVector(tuple(rng.normal(size=d))) for d in (2, 3, 2)]
        assert uncurry(curry(B)).evaluate(*xs) == B.evaluate(*xs)
        est = multilinear_norm_estimate(B, (F,) * 3, F, 48, seed=i)
        a = multilinear_ratio(B, (F,) * 3, F, est.witness)
        b = curried_ratio(curry(B), (F,) * 3, F, est.witness)
        assert a == est.lower_bound
        assert abs(a - b) <= 1e-12 * a


def test_permuted_slots_share_norm_on_transposed_witness():
    rng = np.random.default_rng(2)
    B = TensorMultilinear(rng.normal(size=(2, 2, 3)))
    Bt = permute(B, (1, 0))
    est = multilinear_norm_estimate(B, (F, F), F, 48, seed=0)
    x, y = est.witness
    assert Bt.evaluate(y, x) == B.evaluate(x, y)
    assert multilinear_ratio(Bt, (F, F), F, (y, x)) == est.lower_bound


def test_function_multilinear_partial():
    B = FunctionMultilinear(lambda x, y: x.coord(1) * y, ("F", "F"))
    assert curry(B).apply(v(2)).evaluate(v(1, 3)) == v(2, 6)
    assert metric_norm(F, B.evaluate(v(0), v(1))) == 0.0
