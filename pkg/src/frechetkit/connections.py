"""Christoffel fields, connection maps, the T2M = TM + TM splitting, and linear ODEs.

A connection is given chartwise by ``tau_alpha(f, g)``, a linear map acting
on ``h``; its Christoffel symbol is the bilinear map
``Gamma_alpha(f)(g, h) = tau_alpha(f, g) h`` obtained by uncurrying.
Across a transition ``Theta`` the symbols obey

    Gamma_a(Theta f)(DTheta g, DTheta h) + D^2Theta(f)(h)(g) = DTheta(Gamma_b(f)(g, h)).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from frechetkit.calculus import MCMap, differential, inverse_map, second_differential, solve_truncated
from frechetkit.errors import DomainError, UnsupportedConfigurationError
from frechetkit.frechet_core import FrechetSpace, GradedVector
from frechetkit.lipschitz_ops import (
    CurriedMap,
    FunctionMultilinear,
    LinearMapRep,
    MultilinearMapRep,
    TensorMultilinear,
    curry,
)
from frechetkit.manifold_charts import Chart, Jet1, Jet2


@dataclass(frozen=True, eq=False)
class ChristoffelField:
    """``x -> Gamma(x)``, a bilinear map ``F x F -> F`` at each point of a chart."""

    chart: str
    gamma: Callable[[GradedVector], MultilinearMapRep]
    symmetric: bool = False
    domain: object | None = None

    def at(self, x: GradedVector) -> MultilinearMapRep:
        if self.domain is not None and not self.domain.contains(x):
            raise DomainError(f"point outside the chart {self.chart!r}", x)
        return self.gamma(x)

    __call__ = at

    @classmethod
    def zero(cls, chart: str, space: str = "F") -> "ChristoffelField":
        z = FunctionMultilinear(lambda g, h: GradedVector((), space), (space, space), space, True)
        return cls(chart, lambda x: z, True)

    @classmethod
    def from_coefficients(cls, chart: str, coeffs: dict, dim: int, space: str = "F",
                          domain=None) -> "ChristoffelField":
        """``Gamma(x)(u, v)_i = sum_jk C^i_jk(x) u_j v_k`` with DSL coefficients.

        ``coeffs`` maps ``(i, j, k)`` or the string ``"i,j,k"`` (1-based) to
        expression text in ``x1..x<dim>``.
        """
        from frechetkit import expr_dsl

        def index(key):
            parts = key.split(",") if isinstance(key, str) else key
            return tuple(int(a) for a in parts)

        parsed = {index(key): expr_dsl.parse(text, dim) for key, text in coeffs.items()}
        for key in parsed:
            if len(key) != 3 or not all(1 <= a <= dim for a in key):
                raise DomainError(f"Christoffel index {key} outside 1..{dim}")
        symmetric = all(
            (i, k, j) in parsed and parsed[(i, k, j)] == ast for (i, j, k), ast in parsed.items()
        )

        def gamma(x):
            env = {f"x{j}": x.coord(j) for j in range(1, dim + 1)}
            T = np.zeros((dim, dim, dim))
            for (i, j, k), ast in parsed.items():
                T[i - 1, j - 1, k - 1] = expr_dsl.evaluate(ast, env)
            return TensorMultilinear(T, (space, space), space)

        return cls(chart, gamma, symmetric, domain)


@dataclass(frozen=True, eq=False)
class ConnectionMap:
    """Per-chart ``tau_alpha(f, g)``, each a linear map acting on the fibre."""

    taus: dict  # chart label -> callable (f, g) -> linear map
    domains: dict | None = None
    linear: bool = True

    @classmethod
    def from_christoffel(cls, *fields: ChristoffelField) -> "ConnectionMap":
        """``tau(f, g) = curry(Gamma(f))(g)``."""
        taus = {fld.chart: (lambda f, g, _fld=fld: curry(_fld.at(f)).apply(g)) for fld in fields}
        return cls(taus, {fld.chart: fld.domain for fld in fields})

    def tau(self, alpha, f, g):
        if alpha not in self.taus:
            raise DomainError(f"connection has no representative on chart {alpha!r}")
        dom = (self.domains or {}).get(alpha)
        if dom is not None and not dom.contains(f):
            raise DomainError(f"point outside the chart {alpha!r}", f)
        return self.taus[alpha](f, g)

    def christoffel(self, alpha, space: str = "F") -> ChristoffelField:
        """``Gamma_alpha(f)(g, h) = tau_alpha(f, g) h``."""

        def gamma(f):
            return FunctionMultilinear(lambda g, h: self.tau(alpha, f, g).apply(h), (space, space), space)

        return ChristoffelField(alpha, gamma, False, (self.domains or {}).get(alpha))


def connection_apply(conn: ConnectionMap, alpha, f: GradedVector, g: GradedVector,
                     h: GradedVector, k: GradedVector) -> tuple[GradedVector, GradedVector]:
    """Local connection map ``K_alpha(f, g, h, k) = (f, k + tau_alpha(f, g) h)``."""
    return f, k + conn.tau(alpha, f, g).apply(h)


def christoffel_from_diagonal(Q: Callable, chart: str, sample_points=(), samples: int = 16,
                              seed: int = 0, space: str = "F", dim: int | None = None,
                              tol: float = 1e-12, domain=None) -> ChristoffelField:
    """Bilinear symmetric ``Gamma`` from its diagonal values ``Q(x)(u) = Gamma(x)(u, u)``.

    Polarisation: ``Gamma(x)(u, v) = (Q(x)(u+v) - Q(x)(u) - Q(x)(v)) / 2``, and
    ``Gamma(x)(u, u) = Q(x)(u)`` is returned as is.
    Quadratic homogeneity ``Q(x)(c u) = c^2 Q(x)(u)`` is probed first at
    ``sample_points``; a failure raises :class:`DomainError` with the witness.
    """
    rng = np.random.default_rng(seed)
    n = dim or 3
    for x in sample_points:
        for _ in range(samples):
            u = GradedVector(tuple(rng.normal(size=n)), space)
            c = float(rng.uniform(-3, 3))
            lhs, rhs = Q(x)(c * u), (c * c) * Q(x)(u)
            if (lhs - rhs).sup_abs() > tol * (1.0 + rhs.sup_abs()):
                raise DomainError("diagonal map is not quadratic", (x, u, c))

    def gamma(x):
        q = Q(x)

        def bil(u, v):
            if u == v:  # the polarisation value there is Q(u); skip the rounding
                return q(u)
            # Q(u) + Q(v) is commutative in floating point, so this is exactly symmetric
            return 0.5 * (q(u + v) - (q(u) + q(v)))

        return FunctionMultilinear(bil, (space, space), space, symmetric=True)

    return ChristoffelField(chart, gamma, True, domain)


def pushforward_christoffel(gamma_b: ChristoffelField, theta: MCMap, theta_inverse: MCMap | None = None,
                            label: str | None = None) -> ChristoffelField:
    """Christoffel field in the target chart of ``theta`` compatible with ``gamma_b``.

    With ``f = Theta^-1(y)``, ``g = DTheta(f)^-1 g'`` and ``h = DTheta(f)^-1 h'``:
    ``Gamma_a(y)(g', h') = DTheta(f) Gamma_b(f)(g, h) - D^2Theta(f)(h, g)``.
    """
    inv = theta_inverse if theta_inverse is not None else inverse_map(theta)
    n = theta.dim_in
    sp_in, sp_out = theta.domain_space, theta.codomain_space

    def gamma(y):
        f = inv(y)
        J = differential(theta, f)
        G = gamma_b.at(f)

        def bil(gp, hp):
            g = solve_truncated(J, gp, n, f)
            h = solve_truncated(J, hp, n, f)
            return J.apply(G.evaluate(g, h)) - second_differential(theta, f, h, g)

        return FunctionMultilinear(bil, (sp_out, sp_out), sp_out, gamma_b.symmetric)

    return ChristoffelField(label or f"{gamma_b.chart}*", gamma, gamma_b.symmetric)


@dataclass
class Residual:
    value: float
    witness: tuple | None = None  # (f, g, h) attaining the maximum


def compatibility_residual(gamma_a: ChristoffelField, gamma_b: ChristoffelField, theta: MCMap,
                           space: FrechetSpace, points, samples: int = 1, seed: int = 0) -> Residual:
    """Max over samples of ``||LHS - RHS||_d`` in the transformation law.

    ``points`` is a list of base points ``f`` in the source chart of
    ``theta``; ``samples`` random ``(g, h)`` pairs are drawn per point.
    """
    rng = np.random.default_rng(seed)
    n = theta.dim_in
    worst, witness = 0.0, None
    for f in points:
        J = differential(theta, f)
        y = theta(f)
        Ga, Gb = gamma_a.at(y), gamma_b.at(f)
        for _ in range(samples):
            g = GradedVector(tuple(rng.normal(size=n)), space.id)
            h = GradedVector(tuple(rng.normal(size=n)), space.id)
            lhs = Ga.evaluate(J.apply(g), J.apply(h)) + second_differential(theta, f, h, g)
            rhs = J.apply(Gb.evaluate(g, h))
            r = space.distance(lhs, rhs)
            if r > worst or witness is None:
                worst, witness = r, (f, g, h)
    return Residual(worst, witness)


# ------------------------------------------------------------- splitting


def split_second_tangent(gamma: ChristoffelField, j: Jet2) -> tuple[Jet1, Jet1]:
    """``(x, v, w) -> ((x, v), (x, w + Gamma(x)(v, v)))``."""
    if j.chart != gamma.chart:
        raise DomainError(f"jet in chart {j.chart!r}, connection in {gamma.chart!r}")
    G = gamma.at(j.x)
    return Jet1(j.chart, j.x, j.v), Jet1(j.chart, j.x, j.w + G.evaluate(j.v, j.v))


def merge_second_tangent(gamma: ChristoffelField, first: Jet1, second: Jet1) -> Jet2:
    """Inverse of :func:`split_second_tangent`."""
    if first.x != second.x or first.chart != second.chart:
        raise DomainError("merge needs two 1-jets over the same base point", (first, second))
    G = gamma.at(first.x)
    return Jet2(first.chart, first.x, first.v, second.v - G.evaluate(first.v, first.v))


# ---------------------------------------------------------- linear ODEs

SCALAR_SPACE = "R"


def _scalar(s: float) -> GradedVector:
    return GradedVector((float(s),), SCALAR_SPACE)


@dataclass(frozen=True, eq=False)
class OdeSystem:
    """``dx/dt = A(t) x`` on the fibre space, for ``t`` in ``interval``."""

    A: Callable[[float], LinearMapRep]
    interval: tuple = (-1.0, 1.0)
    space: str = "F"

    def __call__(self, t: float) -> LinearMapRep:
        a, b = self.interval
        if not a <= t <= b:
            raise DomainError(f"t = {t} outside {self.interval}")
        return self.A(t)

    def rhs(self, t: float, x: GradedVector) -> GradedVector:
        return self(t).apply(x)


class _GammaSlice(LinearMapRep):
    """``u -> Gamma(t)(u, 1)``."""

    def __init__(self, G: MultilinearMapRep, space: str):
        self.G = G
        self.domain = self.codomain = space

    def _apply(self, u):
        return self.G.evaluate(u, _scalar(1.0))


def _require_line_base(chart_dim: int):
    if chart_dim != 1:
        raise UnsupportedConfigurationError(
            f"connection/ODE correspondence needs a 1-coordinate base, got dimension {chart_dim}"
        )


def connection_to_ode(gamma_1: ChristoffelField, interval=(-1.0, 1.0), space: str = "F",
                      base_dim: int = 1) -> OdeSystem:
    """``[A(t)](u) = Gamma_1(t)(u, 1)`` for a connection on ``line x F`` in the identity chart."""
    _require_line_base(base_dim)
    return OdeSystem(lambda t: _GammaSlice(gamma_1.at(_scalar(t)), space), tuple(interval), space)


def transfer_ode(ode: OdeSystem, theta: MCMap, interval=None) -> OdeSystem:
    """``A_b(t) = Theta'(t) A_a(Theta(t))`` with ``Theta = phi_a o phi_b^-1``."""
    _require_line_base(theta.dim_in)
    sp = ode.space

    def A_b(t):
        tt = _scalar(t).with_space(theta.domain_space)
        d = differential(theta, tt).apply(GradedVector((1.0,), theta.domain_space)).coord(1)
        inner = ode(theta(tt).coord(1))
        return _ScaledMap(d, inner, sp)

    # the source system checks its own interval on Theta(t)
    return OdeSystem(A_b, tuple(interval or (-float("inf"), float("inf"))), sp)


class _ScaledMap(LinearMapRep):
    def __init__(self, c: float, L: LinearMapRep, space: str):
        self.c, self.L = c, L
        self.domain = self.codomain = space

    def _apply(self, u):
        return self.c * self.L.apply(u)


def ode_to_connection(ode: OdeSystem, chart: Chart | None = None) -> ChristoffelField:
    """``Gamma_b(t)(u, s) = s [A_b(t)](u)``, ``A_b`` obtained through ``phi_b^-1``.

    ``chart=None`` means the identity chart, where ``A_b = A``.
    """
    if chart is None:
        A_b, label = ode, "id"
    else:
        _require_line_base(chart.dim)
        A_b, label = transfer_ode(ode, chart.inverse), chart.label
    sp = ode.space

    def gamma(t):
        At = A_b(t.coord(1))
        return FunctionMultilinear(lambda u, s: s.coord(1) * At.apply(u), (sp, SCALAR_SPACE), sp)

    return ChristoffelField(label, gamma, False)
