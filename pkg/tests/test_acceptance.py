"""Acceptance criteria 1-9, each printed as one PASS/FAIL line."""

import math
import subprocess
import sys
import time

import numpy as np

from frechetkit import expr_dsl
from frechetkit.calculus import (
    CATALOG_EXPRESSIONS,
    Ball,
    MCMap,
    catalog_map,
    catalog_names,
    compose_maps,
    differential,
    directional_derivative,
    second_differential,
)
from frechetkit.connections import (
    SCALAR_SPACE,
    ChristoffelField,
    OdeSystem,
    christoffel_from_diagonal,
    compatibility_residual,
    connection_to_ode,
    merge_second_tangent,
    ode_to_connection,
    pushforward_christoffel,
    split_second_tangent,
)
from frechetkit.frechet_core import (
    GradedVector,
    check_absolutely_convex,
    check_metric_axioms,
    default_space,
    metric_distance,
    sample_dyadic,
    sample_vector,
)
from frechetkit.integrator import (
    PicardProblem,
    VectorFieldLocal,
    error_bound,
    flow_with_certificate,
    picard_solve,
    uniqueness_overlap_check,
)
from frechetkit.lipschitz_ops import (
    FiniteMatrix,
    Identity,
    Scalar,
    TensorMultilinear,
    compose,
    curried_ratio,
    curry,
    lip_norm_estimate,
    multilinear_norm_estimate,
    multilinear_ratio,
    random_structured_map,
    uncurry,
)
from frechetkit.manifold_charts import (
    Atlas,
    Chart,
    Jet1,
    Jet2,
    Overlap,
    cocycle_check,
    jet2_additivity_residual,
    jet2_transition,
    tangent_map,
    transition,
)

F = default_space()


def v(*c, space="F"):
    return GradedVector(tuple(float(x) for x in c), space)


def _brute_distance(e: GradedVector, f: GradedVector) -> float:
    """Enumerate alpha_n rho_n / (1 + rho_n) well past the degree, alpha_n = 2^-n."""
    a, b = list(e.coords), list(f.coords)
    deg = max(len(a), len(b))
    a += [0.0] * (deg - len(a))
    b += [0.0] * (deg - len(b))
    diff = [abs(x - y) for x, y in zip(a, b)]
    best = 0.0
    for n in range(1, deg + 30):
        rho = max(diff[:n], default=0.0)
        best = max(best, 0.5**n * (rho / (1.0 + rho)))
    return best


def test_criterion_1_metric(criterion):
    axioms = check_metric_axioms(F, 10_000, seed=1, tol=1e-12)
    conv = check_absolutely_convex(F, 0.25, 10_000, seed=2, tol=1e-12)
    rng = np.random.default_rng(3)
    mismatches = 0
    for _ in range(1000):
        e, f = sample_vector(rng), sample_vector(rng)
        if metric_distance(F, e, f) != _brute_distance(e, f):
            mismatches += 1
    ok = axioms.passed and conv.passed and mismatches == 0
    assert criterion(1, ok, f"axiom violations={sum(axioms.violations.values())} "
                            f"convexity violations={conv.violations} oracle mismatches={mismatches}")


def test_criterion_2_operators(criterion):
    ident = lip_norm_estimate(Identity(), F, F, 256, seed=0)
    scal = lip_norm_estimate(Scalar(2.0), F, F, 256, seed=0)
    rng = np.random.default_rng(5)
    sub_fail = 0
    for i in range(200):
        L, H = random_structured_map(rng), random_structured_map(rng)
        lh = lip_norm_estimate(compose(L, H), F, F, 64, seed=i)
        if lh.witness is None:
            continue
        x = lh.witness[0]
        eL = lip_norm_estimate(L, F, F, 64, seed=i, extra_probes=[H.apply(x)])
        eH = lip_norm_estimate(H, F, F, 64, seed=i, extra_probes=[x])
        if lh.lower_bound > eL.lower_bound * eH.lower_bound * (1 + 1e-12):
            sub_fail += 1
    rt_fail, transfer = 0, 0.0
    for i in range(20):
        B = TensorMultilinear(rng.normal(size=(3, 2, 2, 3)))
        xs = [GradedVector(tuple(rng.normal(size=d))) for d in (2, 2, 3)]
        if uncurry(curry(B)).evaluate(*xs) != B.evaluate(*xs):
            rt_fail += 1
        est = multilinear_norm_estimate(B, (F,) * 3, F, 64, seed=i)
        a = multilinear_ratio(B, (F,) * 3, F, est.witness)
        b = curried_ratio(curry(B), (F,) * 3, F, est.witness)
        transfer = max(transfer, abs(a - b))
    ok = (ident.lower_bound == 1.0 and scal.lower_bound >= 1.99 and sub_fail == 0
          and rt_fail == 0 and transfer <= 1e-12)
    assert criterion(2, ok, f"||id||>={ident.lower_bound} ||2||>={scal.lower_bound:.6f} "
                            f"submult failures={sub_fail} curry failures={rt_fail} transfer={transfer:.1e}")


def test_criterion_3_calculus(criterion):
    rng = np.random.default_rng(7)
    names = [n for n in catalog_names() if n in CATALOG_EXPRESSIONS]
    worst_fd, worst_sym = 0.0, 0.0
    for i in range(100):
        P = catalog_map(names[i % len(names)])
        p = GradedVector(tuple(rng.uniform(-0.8, 0.8, size=P.dim_in)))
        h = GradedVector(tuple(rng.normal(size=P.dim_in)))
        fd = directional_derivative(P.without_analytic(), p, h).value
        worst_fd = max(worst_fd, (fd - differential(P, p).apply(h)).sup_abs())
        g = GradedVector(tuple(rng.normal(size=P.dim_in)))
        d_hg = second_differential(P, p, h, g, numeric=True)
        d_gh = second_differential(P, p, g, h, numeric=True)
        worst_sym = max(worst_sym, (d_hg - d_gh).sup_abs())
    chain = 0.0
    for outer, inner in (("trig", "square1"), ("product", "rational"), ("mixed3", "mixed3")):
        g, hmap = catalog_map(outer), catalog_map(inner)
        if g.dim_in != hmap.dim_out:
            continue
        for _ in range(10):
            p = GradedVector(tuple(rng.uniform(-0.5, 0.5, size=hmap.dim_in)))
            w = GradedVector(tuple(rng.normal(size=hmap.dim_in)))
            lhs = directional_derivative(compose_maps(g, hmap).without_analytic(), p, w).value
            rhs = differential(g, hmap(p)).apply(differential(hmap, p).apply(w))
            chain = max(chain, (lhs - rhs).sup_abs())
    ok = worst_fd <= 1e-8 and chain < 1e-7 and worst_sym < 1e-6
    assert criterion(3, ok, f"fd-vs-analytic={worst_fd:.1e} chain={chain:.1e} D2 symmetry={worst_sym:.1e}")


def test_criterion_4_jets(criterion):
    theta = MCMap.from_expressions(["x1^3 + x1"])
    out = jet2_transition(theta, Jet2("x", v(1), v(1), v(0)))
    jet_err = max((out.x - v(2)).sup_abs(), (out.v - v(4)).sup_abs(), (out.w - v(6)).sup_abs())
    additivity = jet2_additivity_residual(theta, v(1), (v(1), v(0)), (v(1), v(0)))
    rng = np.random.default_rng(8)
    linear = 0.0
    for _ in range(100):
        x = v(float(rng.integers(-32, 33)) / 16)
        v1, v2 = sample_dyadic(rng, max_deg=1, bits=6, magnitude=4), sample_dyadic(rng, max_deg=1, bits=6, magnitude=4)
        t12 = tangent_map(theta, Jet1("x", x, v1 + v2)).v
        linear = max(linear, (t12 - (tangent_map(theta, Jet1("x", x, v1)).v
                                     + tangent_map(theta, Jet1("x", x, v2)).v)).sup_abs())
    ball = Ball((0.0,), 0.5)
    atlas = Atlas([Chart.from_expressions("id", ["x1"], ["x1"], ball),
                   Chart.from_expressions("a", ["x1^3 + x1"], None, ball),
                   Chart.from_expressions("q", ["x1 + x1^3 + 0.1*x1^5"], None, ball)],
                  [Overlap(p, ball) for p in (("id", "a"), ("id", "q"), ("a", "q"))])
    rep = cocycle_check(atlas, 20, seed=9)
    ok = linear == 0.0 and jet_err <= 1e-8 and additivity > 0.1 and rep.passed and rep.max_residual < 1e-9
    assert criterion(4, ok, f"jet1 linearity={linear} jet2 error={jet_err:.1e} "
                            f"additivity residual={additivity:.3g} cocycle={rep.max_residual:.1e}")


def test_criterion_5_connections(criterion):
    ball = Ball((0.0,), 2.0)
    atlas = Atlas([Chart.from_expressions("id", ["x1"], ["x1"], ball),
                   Chart.from_expressions("a", ["x1^3 + x1"], None, ball)],
                  [Overlap(("a", "id"), Ball((0.0,), 1.5))])
    gb = ChristoffelField.from_coefficients("id", {"1,1,1": "x1"}, 1)
    theta = transition(atlas, "a", "id")
    ga = pushforward_christoffel(gb, theta, label="a")
    rng = np.random.default_rng(10)
    pts = atlas.sample_overlap("a", "id", 100, rng, chart="id")
    push = compatibility_residual(ga, gb, theta, F, pts, samples=1, seed=11).value
    ident = compatibility_residual(gb, gb, MCMap.identity(1), F, pts, samples=1, seed=12).value
    G2 = ChristoffelField.from_coefficients("x", {"1,1,1": "x1", "1,2,2": "3", "2,1,2": "x2^2"}, 2)
    split_fail = 0
    for _ in range(100):
        x, a, b = (v(*(rng.integers(-256, 256, size=2) / 64)) for _ in range(3))
        j = Jet2("x", x, a, b)
        if merge_second_tangent(G2, *split_second_tangent(G2, j)) != j:
            split_fail += 1

    def Q(x):
        return lambda u: G2.at(x).evaluate(u, u)

    pol = christoffel_from_diagonal(Q, "x", [v(0.5, 0.5)], dim=2)
    diag = 0.0
    for _ in range(100):
        x, u = v(*rng.normal(size=2)), v(*rng.normal(size=2))
        diag = max(diag, (pol.at(x).evaluate(u, u) - Q(x)(u)).sup_abs())
    ok = push < 1e-7 and ident <= 1e-12 and split_fail == 0 and diag == 0.0
    assert criterion(5, ok, f"pushforward residual={push:.1e} identity residual={ident:.1e} "
                            f"split/merge failures={split_fail} polarization diagonal={diag}")


def test_criterion_6_ode(criterion):
    def A(t):
        return FiniteMatrix.from_array([[1.0, t], [0.0, math.cos(t)]])

    ode = OdeSystem(A, (-4.0, 4.0))
    back = connection_to_ode(ode_to_connection(ode), (-4.0, 4.0))
    rng = np.random.default_rng(13)
    fails = 0
    for _ in range(100):
        t, u = float(rng.uniform(-4, 4)), v(*rng.normal(size=2))
        if back.rhs(t, u) != ode.rhs(t, u):
            fails += 1
    chart = Chart.from_expressions("beta", ["x1/2"], ["2*x1"], space=SCALAR_SPACE)
    moved = connection_to_ode(ode_to_connection(ode, chart), (-2.0, 2.0))
    worst = 0.0
    for _ in range(100):
        t, u = float(rng.uniform(-2, 2)), v(*rng.normal(size=2))
        expected = 2.0 * A(2.0 * t).apply(u)  # A_beta(t) = 2 A(2t)
        worst = max(worst, (moved.rhs(t, u) - expected).sup_abs())
    ok = fails == 0 and worst <= 1e-9
    assert criterion(6, ok, f"roundtrip failures={fails} transfer error={worst:.1e}")


def test_criterion_7_integrator(criterion):
    start = time.perf_counter()
    fld = VectorFieldLocal.from_expressions("id", ["x1"], L_sup=2.0, R_lip=1.0)
    prob = PicardProblem(fld, v(1), t0=0.0, r=1.0, grid_step=1e-3, tol=0.0)
    sol = picard_solve(prob, max_iters=8)
    err = float(np.max(np.abs(sol.final[:, 0] - np.exp(sol.times))))
    bound = error_bound(2.0, 1.0, 8, 0.5) + sol.quadrature_error_estimate
    point, fsol = flow_with_certificate(fld, v(1), 0.1, v(1), 1.0)
    flow_err = abs(point.coord(1) - math.exp(0.1))
    ball = Ball((0.0,), 4.0)
    atlas = Atlas([Chart.from_expressions("id", ["x1"], ["x1"], ball),
                   Chart.from_expressions("b", ["2*x1"], ["x1/2"], ball)],
                  [Overlap(("b", "id"), Ball((0.0,), 3.0))])
    fields = {"id": fld, "b": VectorFieldLocal.from_expressions("b", ["x1"], L_sup=2.0, R_lip=1.0)}
    rep = uniqueness_overlap_check(atlas, fields, "b", "id", v(1), 0.5, r=1.0, grid_step=1e-3)
    elapsed = time.perf_counter() - start
    ok = (prob.m == 0.5 and sol.n_iters == 8 and err <= bound and sol.sound
          and flow_err <= fsol.tolerance and rep.deviation < 1e-6 and elapsed < 5.0)
    assert criterion(7, ok, f"m={prob.m} sup|l8-e^t|={err:.2e} <= {bound:.2e} sound={sol.sound} "
                            f"flow error={flow_err:.1e} uniqueness={rep.deviation:.1e} time={elapsed:.2f}s")


def _fd_oracle(ast, var, env, h=1e-3):
    def f(s):
        e = dict(env)
        e[var] = s
        return expr_dsl.evaluate(ast, e)

    x = env[var]
    d = [(f(x + s) - f(x - s)) / (2 * s) for s in (h, h / 2, h / 4)]
    r1 = [(4 * d[1] - d[0]) / 3, (4 * d[2] - d[1]) / 3]
    return (16 * r1[1] - r1[0]) / 15


def test_criterion_8_dsl(criterion):
    rng = np.random.default_rng(14)
    rt_fail = 0
    for _ in range(1000):
        ast = expr_dsl.random_ast(rng, depth=4, dim=3)
        if expr_dsl.parse(expr_dsl.to_text(ast)) != ast:
            rt_fail += 1
    worst = 0.0
    for name, texts in CATALOG_EXPRESSIONS.items():
        dim = len(texts)
        for text in texts:
            ast = expr_dsl.parse(text, dim)
            for j in range(1, dim + 1):
                d = expr_dsl.differentiate(ast, f"x{j}")
                for _ in range(100):
                    env = {f"x{k}": float(rng.uniform(-0.8, 0.8)) for k in range(1, dim + 1)}
                    worst = max(worst, abs(expr_dsl.evaluate(d, env) - _fd_oracle(ast, f"x{j}", env)))
    ok = rt_fail == 0 and worst <= 1e-7
    assert criterion(8, ok, f"roundtrip failures={rt_fail} symbolic-vs-fd={worst:.1e}")


def test_criterion_9_determinism(criterion, tmp_path):
    reports = []
    for name in ("first", "second"):
        out = tmp_path / name
        proc = subprocess.run([sys.executable, "-m", "frechetkit.cli", "all", "--out", str(out), "--seed", "7"],
                              capture_output=True, text=True, timeout=300)
        reports.append((proc.returncode, (out / "report.json").read_bytes()))
    same = reports[0][1] == reports[1][1]
    ok = same and reports[0][0] == 0
    assert criterion(9, ok, f"byte-identical={same} exit={reports[0][0]},{reports[1][0]}")
