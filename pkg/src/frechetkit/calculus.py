"""Directional derivatives, differentials and smoothness probes for MC maps.

Maps act on a finite truncation (``dim_in`` coordinates in, ``dim_out``
out).  Derivatives come either from analytic callables, typically generated
symbolically from :mod:`frechetkit.expr_dsl`, or from central differences
with Richardson extrapolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from frechetkit import expr_dsl
from frechetkit.errors import DomainError, DslSyntaxError
from frechetkit.frechet_core import FrechetSpace, GradedVector
from frechetkit.lipschitz_ops import (
    FiniteMatrix,
    FunctionMultilinear,
    LinearMapRep,
    TensorMultilinear,
    compose,
    op_metric,
)

DEFAULT_STEP = 1e-3


@dataclass(frozen=True)
class Ball:
    """Open coordinate ball ``max_i |p_i - c_i| < radius`` in a truncation."""

    center: tuple
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if not self.radius > 0:
            raise DomainError(f"ball radius must be positive, got {self.radius}")

    @property
    def dim(self) -> int:
        return len(self.center)

    def contains(self, p: GradedVector) -> bool:
        if p.deg > self.dim:
            return False
        return all(abs(p.coord(i + 1) - c) < self.radius for i, c in enumerate(self.center))

    def sample(self, rng: np.random.Generator, space_id: str = "F", shrink: float = 0.9) -> GradedVector:
        u = rng.uniform(-1, 1, size=self.dim) * self.radius * shrink
        return GradedVector(tuple(np.array(self.center) + u), space_id)


@dataclass(frozen=True)
class PredicateDomain:
    """Domain given by a membership callable (e.g. images of balls)."""

    predicate: Callable[[GradedVector], bool]

    def contains(self, p):
        try:
            return bool(self.predicate(p))
        except DomainError:
            return False


@dataclass(frozen=True, eq=False)
class MCMap:
    """``P: U -> F`` on a truncation, with optional analytic derivatives.

    ``jacobian(p)`` returns a :class:`LinearMapRep`; ``second(p)`` returns a
    bilinear map with ``second(p)(h, g) = D^2 P(p)(h, g)``.
    """

    fn: Callable[[GradedVector], GradedVector]
    dim_in: int
    dim_out: int
    domain_space: str = "F"
    codomain_space: str = "F"
    jacobian: Callable | None = None
    second: Callable | None = None
    smoothness: float = math.inf
    domain: object | None = None
    name: str = "P"
    linear: bool = False

    def __post_init__(self):
        if self.smoothness < 1:
            raise DomainError(f"map {self.name!r} declares smoothness {self.smoothness} < 1")

    def in_domain(self, p: GradedVector) -> bool:
        if p.space_id != self.domain_space or p.deg > self.dim_in:
            return False
        return self.domain is None or self.domain.contains(p)

    def __call__(self, p: GradedVector) -> GradedVector:
        if not self.in_domain(p):
            raise DomainError(f"point outside the domain of {self.name!r}", p)
        return self.fn(p)

    def without_analytic(self) -> "MCMap":
        return replace(self, jacobian=None, second=None)

    # constructors --------------------------------------------------------

    @classmethod
    def identity(cls, dim: int, space: str = "F", domain=None) -> "MCMap":
        from frechetkit.lipschitz_ops import Identity

        return cls(lambda p: p, dim, dim, space, space,
                   jacobian=lambda p: Identity(space),
                   second=lambda p: FunctionMultilinear(lambda h, g: GradedVector((), space), (space, space), space),
                   domain=domain, name="id", linear=True)

    @classmethod
    def from_linear(cls, L: LinearMapRep, dim: int, domain=None, name="L") -> "MCMap":
        return cls(L.apply, dim, dim, L.domain, L.codomain,
                   jacobian=lambda p: L,
                   second=lambda p: FunctionMultilinear(
                       lambda h, g: GradedVector((), L.codomain), (L.domain, L.domain), L.codomain),
                   domain=domain, name=name, linear=True)

    @classmethod
    def from_expressions(cls, texts: Sequence[str], dim: int | None = None, space: str = "F",
                         codomain: str | None = None, domain=None, name: str = "P",
                         smoothness: float = math.inf) -> "MCMap":
        """Coordinatewise map from DSL expressions in ``x1..x<dim>``.

        Jacobian and second differential are generated symbolically.
        """
        dim_in = len(texts) if dim is None else dim
        codomain = space if codomain is None else codomain
        asts = [expr_dsl.parse(t, dim_in) for t in texts]
        return cls.from_asts(asts, dim_in, space, codomain, domain, name, smoothness)

    @classmethod
    def from_asts(cls, asts, dim_in, space="F", codomain="F", domain=None, name="P",
                  smoothness=math.inf) -> "MCMap":
        names = [f"x{j}" for j in range(1, dim_in + 1)]
        d1 = [[expr_dsl.differentiate(a, v) for v in names] for a in asts]
        d2 = [[[expr_dsl.differentiate(dij, v) for v in names] for dij in row] for row in d1]
        dim_out = len(asts)

        def env(p):
            return {v: p.coord(j) for j, v in enumerate(names, start=1)}

        def fn(p):
            e = env(p)
            return GradedVector(tuple(expr_dsl.evaluate(a, e) for a in asts), codomain)

        def jac(p):
            e = env(p)
            rows = [[expr_dsl.evaluate(d, e) for d in row] for row in d1]
            return FiniteMatrix.from_array(np.array(rows).reshape(dim_out, dim_in), space, codomain)

        def sec(p):
            e = env(p)
            n = max(dim_in, dim_out)
            T = np.zeros((n, n, n))
            for i, row in enumerate(d2):
                for j, col in enumerate(row):
                    for k, d in enumerate(col):
                        T[i, j, k] = expr_dsl.evaluate(d, e)
            return TensorMultilinear(T, (space, space), codomain)

        m = cls(fn, dim_in, dim_out, space, codomain, jacobian=jac, second=sec,
                smoothness=smoothness, domain=domain, name=name)
        object.__setattr__(m, "exprs", tuple(asts))
        return m


# --------------------------------------------------------------- derivatives


@dataclass
class DerivativeResult:
    value: GradedVector
    error_indicator: float
    steps: tuple


def _central(P: MCMap, p, h, t):
    return (P(p + t * h) - P(p - t * h)) / (2.0 * t)


def _usable_step(P: MCMap, p, h, t0, tries=30):
    t = t0
    for _ in range(tries):
        if all(P.in_domain(p + s * h) and P.in_domain(p - s * h) for s in (t, t / 2, t / 4)):
            return t
        t /= 2
    raise DomainError(f"no usable difference step inside the domain of {P.name!r}", p)


def directional_derivative(P: MCMap, p: GradedVector, h: GradedVector,
                           t0: float | None = None) -> DerivativeResult:
    """``d_p P(h)`` by central differences at ``t0, t0/2, t0/4`` with Richardson extrapolation.

    The error indicator is the sup-norm gap between the last two
    extrapolation levels.
    """
    if not P.in_domain(p):
        raise DomainError(f"point outside the domain of {P.name!r}", p)
    if h.deg == 0:
        return DerivativeResult(GradedVector((), P.codomain_space), 0.0, ())
    if t0 is None:
        # power-of-two step: affine maps come out exact on dyadic inputs
        t0 = 2.0 ** round(math.log2(DEFAULT_STEP * (1.0 + h.sup_abs())))
    t = _usable_step(P, p, h, t0)
    d0, d1, d2 = (_central(P, p, h, s) for s in (t, t / 2, t / 4))
    r1a = (4.0 * d1 - d0) / 3.0
    r1b = (4.0 * d2 - d1) / 3.0
    r2 = (16.0 * r1b - r1a) / 15.0
    return DerivativeResult(r2, (r2 - r1b).sup_abs(), (t, t / 2, t / 4))


def differential(P: MCMap, p: GradedVector, degree: int | None = None,
                 numeric: bool = False) -> LinearMapRep:
    """``d_p P`` as a linear map; the analytic Jacobian when one is attached.

    Otherwise a ``degree x degree`` finite matrix assembled column by column
    from :func:`directional_derivative` on ``e_1 .. e_degree``.
    """
    if P.jacobian is not None and not numeric:
        if not P.in_domain(p):
            raise DomainError(f"point outside the domain of {P.name!r}", p)
        return P.jacobian(p)
    degree = max(P.dim_in, P.dim_out) if degree is None else degree
    M = np.zeros((degree, degree))
    for j in range(1, min(degree, P.dim_in) + 1):
        col = directional_derivative(P, p, GradedVector.basis(j, P.domain_space)).value
        k = min(degree, col.deg)
        M[:k, j - 1] = col.coords[:k]
    return FiniteMatrix.from_array(M, P.domain_space, P.codomain_space)


def second_differential(P: MCMap, p: GradedVector, h: GradedVector, g: GradedVector,
                        numeric: bool = False, s0: float | None = None) -> GradedVector:
    """``D^2 P(p)(h, g)``.

    Numerically: central differences in direction ``g`` of the Richardson
    directional derivative in direction ``h``, extrapolated two levels.
    """
    if P.second is not None and not numeric:
        if not P.in_domain(p):
            raise DomainError(f"point outside the domain of {P.name!r}", p)
        return P.second(p).evaluate(h, g)
    if h.deg == 0 or g.deg == 0:
        return GradedVector((), P.codomain_space)
    if s0 is None:
        s0 = 2.0 ** round(math.log2(1e-2 * (1.0 + g.sup_abs())))
    s = s0

    def dd(q):
        return directional_derivative(P, q, h).value

    for _ in range(30):
        try:
            v0, v1, v2 = ((dd(p + step * g) - dd(p - step * g)) / (2.0 * step)
                          for step in (s, s / 2, s / 4))
            break
        except DomainError:
            s /= 2
    else:
        raise DomainError(f"no usable step for the second differential of {P.name!r}", p)
    return (16.0 * ((4.0 * v2 - v1) / 3.0) - (4.0 * v1 - v0) / 3.0) / 15.0


# --------------------------------------------------------- map combinators


def compose_maps(g: MCMap, h: MCMap, name: str | None = None) -> MCMap:
    """``g o h``; analytic derivatives by the first and second order chain rule."""
    if h.codomain_space != g.domain_space:
        raise DomainError("cannot compose: codomain/domain spaces differ")

    def fn(p):
        return g(h(p))

    jac = sec = None
    if g.jacobian is not None and h.jacobian is not None:
        def jac(p):
            return compose(g.jacobian(h(p)), h.jacobian(p))

    if jac is not None and g.second is not None and h.second is not None:
        def sec(p):
            q = h(p)
            Jh, Jg, Sg, Sh = h.jacobian(p), g.jacobian(q), g.second(q), h.second(p)

            def bil(u, v):
                return Sg.evaluate(Jh.apply(u), Jh.apply(v)) + Jg.apply(Sh.evaluate(u, v))

            return FunctionMultilinear(bil, (h.domain_space, h.domain_space), g.codomain_space)

    return MCMap(fn, h.dim_in, g.dim_out, h.domain_space, g.codomain_space, jac, sec,
                 min(g.smoothness, h.smoothness), h.domain,
                 name or f"{g.name}o{h.name}", g.linear and h.linear)


def solve_truncated(J: LinearMapRep, rhs: GradedVector, n: int, point=None) -> GradedVector:
    """Solve ``J u = rhs`` on the first ``n`` coordinates."""
    A = J.dense(n)
    try:
        u = np.linalg.solve(A, rhs.to_array(max(n, rhs.deg))[:n])
    except np.linalg.LinAlgError:
        raise DomainError("differential is singular on the truncation", point) from None
    if not np.all(np.isfinite(u)) or np.linalg.cond(A) > 1e14:
        raise DomainError("differential is numerically singular on the truncation", point)
    return GradedVector(tuple(u), J.domain)


def inverse_map(P: MCMap, domain=None, guess: Callable | None = None, name: str | None = None,
                tol: float = 4e-16, max_iter: int = 100) -> MCMap:
    """Local inverse of ``P`` by damped Newton iteration.

    Derivatives follow from the inverse function theorem:
    ``D(P^-1)(y) = DP(x)^-1`` and
    ``D^2(P^-1)(y)(u, v) = -DP(x)^-1 D^2P(x)(DP(x)^-1 u, DP(x)^-1 v)``.
    """
    n = P.dim_in
    if P.dim_out != n:
        raise DomainError("only square maps can be inverted")
    P = replace(P, domain=None)  # Newton may pass through points outside P's declared domain
    sp_in, sp_out = P.domain_space, P.codomain_space

    def value(x):
        # composite maps still check their inner domains; treat a failure as "not here"
        try:
            return P(x)
        except DomainError:
            return None

    def start(y):
        first = guess(y) if guess is not None else y.with_space(sp_in)
        candidates = [(0.5**k) * first for k in range(60)] + [GradedVector((), sp_in)]
        for x in candidates:
            if value(x) is not None:
                return x
        raise DomainError(f"no admissible starting point for inverting {P.name!r}", y)

    def solve(y):
        x = start(y)
        for _ in range(max_iter):
            r = value(x) - y.with_space(sp_out)
            scale = 1.0 + y.sup_abs()
            if r.sup_abs() <= tol * scale:
                return x
            step = solve_truncated(differential(P, x), r, n, x)
            lam = 1.0
            while lam > 1e-8:
                cand = x - lam * step
                pc = value(cand)
                if pc is not None and (pc - y.with_space(sp_out)).sup_abs() < r.sup_abs():
                    x = cand
                    break
                lam /= 2
            else:
                return x  # stalled at rounding level
        raise DomainError(f"Newton inversion of {P.name!r} did not converge", y)

    def jac(y):
        x = solve(y)
        A = differential(P, x).dense(n)
        return FiniteMatrix.from_array(np.linalg.inv(A), sp_out, sp_in)

    sec = None
    if P.second is not None:
        def sec(y):
            x = solve(y)
            J = differential(P, x)
            S = P.second(x)

            def bil(u, v):
                a = solve_truncated(J, u.with_space(sp_out), n, x)
                b = solve_truncated(J, v.with_space(sp_out), n, x)
                return -solve_truncated(J, S.evaluate(a, b), n, x)

            return FunctionMultilinear(bil, (sp_out, sp_out), sp_in)

    return MCMap(solve, n, n, sp_out, sp_in, jac, sec, P.smoothness, domain,
                 name or f"{P.name}^-1")


# ---------------------------------------------------------- smoothness probe


@dataclass
class SmoothnessReport:
    orders: dict = field(default_factory=dict)  # order -> list of per-sample dicts
    flagged: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.flagged


def mc_smoothness_probe(P: MCMap, region: Ball, k: int, samples: int, seed: int,
                        space: FrechetSpace, steps: int = 5, probe_budget: int = 64) -> SmoothnessReport:
    """Continuity moduli of ``p -> d_p P`` (and of higher differenced maps) in the metric D.

    For each sample base point ``p`` and shrinking offsets ``p'`` the report
    records ``d(p, p')`` and a lower bound of ``D(P^(j)(p), P^(j)(p'))``;
    order ``j >= 2`` uses the linear maps ``h -> D^j P(p)(h, w, ...)`` for a
    fixed random ``w``.  Non-decay (modulus not shrinking, or unbounded
    slope) is flagged.
    """
    if k < 1:
        raise DomainError("k must be >= 1")
    rng = np.random.default_rng(seed)
    report = SmoothnessReport()
    n = max(P.dim_in, P.dim_out)

    def derivative_map(order, p, ws):
        if order == 1:
            return differential(P, p, n)
        cols = np.zeros((n, n))
        for j in range(1, n + 1):
            e = GradedVector.basis(j, P.domain_space)
            v = second_differential(P, p, e, ws[0])
            k_ = min(n, v.deg)
            cols[:k_, j - 1] = v.coords[:k_]
        return FiniteMatrix.from_array(cols, P.domain_space, P.codomain_space)

    for order in range(1, k + 1):
        rows = []
        for _ in range(samples):
            p = region.sample(rng, P.domain_space, shrink=0.5)
            u = GradedVector(tuple(rng.normal(size=region.dim)), P.domain_space)
            ws = [GradedVector(tuple(rng.normal(size=region.dim)), P.domain_space)]
            base = derivative_map(order, p, ws)
            dists, moduli = [], []
            for j in range(1, steps + 1):
                q = p + (0.1 * region.radius * 10.0 ** (1 - j) / max(u.sup_abs(), 1e-300)) * u
                other = derivative_map(order, q, ws)
                dists.append(space.distance(p, q))
                moduli.append(op_metric(base, other, space, space, probe_budget, seed,
                                        degree=n).lower_bound)
            slopes = [m / d if d > 0 else 0.0 for m, d in zip(moduli, dists)]
            decays = moduli[-1] <= moduli[0] + 1e-12 and all(math.isfinite(s) for s in slopes)
            rows.append({"point": list(p.coords), "distances": dists, "moduli": moduli,
                         "slopes": slopes, "decays": decays})
            if not decays:
                report.flagged.append((order, p))
        report.orders[order] = rows
    return report


# -------------------------------------------------------------------- catalog

CATALOG_EXPRESSIONS = {
    "square1": ["x1^2", "x2"],
    "product": ["x1*x2", "0"],
    "cubic": ["x1^3 + x1"],
    "quintic": ["x1 + x1^3 + 0.1*x1^5"],
    "trig": ["sin(x1)*x2", "exp(x1) - x2^2"],
    "rational": ["x1/(1 + x2^2)", "tanh(x1 - x2)"],
    "mixed3": ["x1*x2*x3", "cos(x2) + x3^2", "exp(-x1)*x3"],
}

_CATALOG: dict[str, MCMap] = {}


def register_map(name: str, texts: Sequence[str] | MCMap, dim: int | None = None, **kw) -> MCMap:
    """Add a map to the catalog.

    Expressions outside the smooth DSL (e.g. ``abs``) and maps declaring
    smoothness below 1 are rejected with :class:`DomainError`.
    """
    if isinstance(texts, MCMap):
        m = texts
    else:
        try:
            m = MCMap.from_expressions(list(texts), dim, name=name, **kw)
        except DslSyntaxError as exc:
            raise DomainError(f"catalog entry {name!r} rejected: {exc}") from exc
    if m.smoothness < 1:
        raise DomainError(f"catalog entry {name!r} is not smooth")
    _CATALOG[name] = m
    return m


def catalog_map(name: str) -> MCMap:
    if name not in _CATALOG:
        if name not in CATALOG_EXPRESSIONS:
            raise DomainError(f"unknown catalog map {name!r}")
        register_map(name, CATALOG_EXPRESSIONS[name])
    return _CATALOG[name]


def catalog_names() -> list[str]:
    return sorted(set(CATALOG_EXPRESSIONS) | set(_CATALOG))
