"""Charts, atlases, transition maps, and 1-/2-jets in chart coordinates.

Manifold points are given in a reference parametrisation; a chart's
``forward`` map sends reference coordinates to chart coordinates and
``inverse`` goes back.  Jets carry the label of the chart they are
written in.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from frechetkit.calculus import (
    Ball,
    MCMap,
    PredicateDomain,
    compose_maps,
    differential,
    inverse_map,
    second_differential,
    solve_truncated,
)
from frechetkit.errors import DomainError
from frechetkit.frechet_core import GradedVector


@dataclass(frozen=True, eq=False)
class Chart:
    label: str
    space: str
    domain: Ball  # U_alpha, in reference coordinates
    forward: MCMap
    inverse: MCMap

    @classmethod
    def from_expressions(cls, label, forward, inverse=None, domain: Ball | None = None,
                         space: str = "F") -> "Chart":
        """Chart from DSL expressions; a missing inverse is computed by Newton iteration."""
        dim = len(forward)
        dom = domain if domain is not None else Ball((0.0,) * dim, math.inf)
        fwd = MCMap.from_expressions(forward, dim, space, domain=dom, name=f"phi_{label}")
        if inverse is not None:
            inv = MCMap.from_expressions(inverse, dim, space, name=f"phi_{label}^-1")
        else:
            inv = inverse_map(fwd, name=f"phi_{label}^-1")
        image = PredicateDomain(lambda y: dom.contains(inv.fn(y)))
        return cls(label, space, dom, fwd, replace(inv, domain=image))

    @property
    def dim(self) -> int:
        return self.forward.dim_in

    def roundtrip_residual(self, points) -> float:
        return max(((self.inverse.fn(self.forward(p)) - p).sup_abs() for p in points), default=0.0)


@dataclass(frozen=True)
class Overlap:
    charts: tuple  # (alpha, beta)
    region: Ball  # subset of U_alpha n U_beta, reference coordinates


@dataclass(eq=False)
class Atlas:
    charts: dict
    overlaps: list = field(default_factory=list)

    def __post_init__(self):
        if isinstance(self.charts, (list, tuple)):
            self.charts = {c.label: c for c in self.charts}

    def chart(self, label) -> Chart:
        try:
            return self.charts[label]
        except KeyError:
            raise DomainError(f"unknown chart {label!r}") from None

    def overlap(self, a, b) -> Ball:
        if a == b:
            return self.chart(a).domain
        for ov in self.overlaps:
            if set(ov.charts) == {a, b}:
                return ov.region
        raise DomainError(f"charts {a!r} and {b!r} have no declared overlap")

    def sample_overlap(self, a, b, n, rng, chart=None, extra=()) -> list[GradedVector]:
        """``n`` points of the declared overlap, written in ``chart`` (reference if None).

        ``extra`` lists further chart pairs whose overlaps must also contain
        the point (triple overlaps).
        """
        region = self.overlap(a, b)
        regions = [region] + [self.overlap(*pair) for pair in extra]
        sp = self.chart(a).space
        out, tries = [], 0
        while len(out) < n and tries < 1000 * n:
            tries += 1
            p = region.sample(rng, sp)
            if all(r.contains(p) for r in regions):
                out.append(self.chart(chart).forward(p) if chart is not None else p)
        if len(out) < n:
            raise DomainError(f"could not sample the overlap of {a!r} and {b!r}")
        return out


def _image_domain(chart: Chart, region: Ball) -> PredicateDomain:
    return PredicateDomain(lambda y: region.contains(chart.inverse.fn(y)))


def transition(atlas: Atlas, alpha, beta) -> MCMap:
    """``Theta_{alpha beta} = phi_alpha o phi_beta^-1`` on ``phi_beta(U_alpha n U_beta)``."""
    region = atlas.overlap(alpha, beta)
    cb = atlas.chart(beta)
    dom = _image_domain(cb, region)
    if alpha == beta:
        return MCMap.identity(cb.dim, cb.space, domain=dom)
    ca = atlas.chart(alpha)
    theta = compose_maps(ca.forward, cb.inverse, name=f"Theta_{alpha}{beta}")
    return replace(theta, domain=dom)


# ------------------------------------------------------------------- jets


@dataclass(frozen=True)
class Jet1:
    chart: str
    x: GradedVector
    v: GradedVector

    @property
    def base(self) -> GradedVector:  # pi_M
        return self.x


@dataclass(frozen=True)
class Jet2:
    chart: str
    x: GradedVector
    v: GradedVector
    w: GradedVector

    def project_12(self) -> Jet1:
        """``pi_12``: forget the second derivative."""
        return Jet1(self.chart, self.x, self.v)

    @property
    def base(self) -> GradedVector:  # Pi_TM / pi^2
        return self.x

    def embed(self) -> tuple:
        """Coordinates ``(x, v, v, w)`` of the jet as an element of T(TM)."""
        return (self.x, self.v, self.v, self.w)


def in_second_order_locus(upsilon: tuple) -> bool:
    """``pi_2(Y) == T pi_M (Y)`` for ``Y = (x, v, a, b)`` in T(TM) coordinates.

    ``pi_2`` gives the base point ``(x, v)`` and ``T pi_M`` gives ``(x, a)``.
    """
    x, v, a, _ = upsilon
    return v == a


def tangent_map(h: MCMap, j: Jet1, target: str | None = None) -> Jet1:
    """``Th``: ``(x, v) -> (h(x), Dh(x) v)``."""
    if not h.in_domain(j.x):
        raise DomainError(f"jet base point outside the domain of {h.name!r}", j.x)
    J = differential(h, j.x)
    return Jet1(target or j.chart, h(j.x), J.apply(j.v))


def jet2_transition(theta: MCMap, j: Jet2, target: str | None = None) -> Jet2:
    """``(x, v, w) -> (Theta x, DTheta v, D^2Theta(v, v) + DTheta w)``."""
    if not theta.in_domain(j.x):
        raise DomainError(f"jet base point outside the domain of {theta.name!r}", j.x)
    J = differential(theta, j.x)
    quad = second_differential(theta, j.x, j.v, j.v)
    return Jet2(target or j.chart, theta(j.x), J.apply(j.v), quad + J.apply(j.w))


def jet2_additivity_residual(theta: MCMap, x: GradedVector, vw1: tuple, vw2: tuple) -> float:
    """Sup-norm defect of additivity of the 2-jet transformation in the fibre at ``x``.

    Zero for every pair if and only if ``D^2 Theta(x)`` vanishes on them;
    this is the failure of the fibrewise linear structure.
    """
    (v1, w1), (v2, w2) = vw1, vw2
    t1 = jet2_transition(theta, Jet2("", x, v1, w1))
    t2 = jet2_transition(theta, Jet2("", x, v2, w2))
    t12 = jet2_transition(theta, Jet2("", x, v1 + v2, w1 + w2))
    dv = t12.v - (t1.v + t2.v)
    dw = t12.w - (t1.w + t2.w)
    return max(dv.sup_abs(), dw.sup_abs())


# --------------------------------------------------------------- cocycles


@dataclass
class CocycleReport:
    checked_triples: int
    checked_points: int
    max_residual: float
    max_inverse_residual: float
    violations: list

    @property
    def passed(self) -> bool:
        return not self.violations


def cocycle_check(atlas: Atlas, samples: int, seed: int, tol: float = 1e-9) -> CocycleReport:
    """``Theta_ag = Theta_ab o Theta_bg`` on triple overlaps, plus invertibility of DTheta.

    Invertibility is witnessed by solving ``DTheta u = e_i`` on the
    truncation and checking the residual.
    """
    rng = np.random.default_rng(seed)
    labels = sorted(atlas.charts)
    violations, worst, worst_inv, points, triples = [], 0.0, 0.0, 0, 0
    if len(labels) < 2:
        return CocycleReport(0, 0, 0.0, 0.0, [])
    for a, b, g in itertools.permutations(labels, 3) if len(labels) >= 3 else []:
        try:
            pts = atlas.sample_overlap(a, b, samples, rng, chart=None, extra=[(b, g), (a, g)])
        except DomainError:
            continue
        triples += 1
        t_ag, t_ab, t_bg = transition(atlas, a, g), transition(atlas, a, b), transition(atlas, b, g)
        cg = atlas.chart(g)
        for p in pts:
            y = cg.forward(p)
            res = (t_ag(y) - t_ab(t_bg(y))).sup_abs()
            points += 1
            worst = max(worst, res)
            if res > tol:
                violations.append({"charts": [a, b, g], "point": list(p.coords), "residual": res})
    for a, b in itertools.permutations(labels, 2):
        try:
            pts = atlas.sample_overlap(a, b, samples, rng, chart=b)
        except DomainError:
            continue
        theta = transition(atlas, a, b)
        n = theta.dim_in
        for y in pts:
            J = differential(theta, y)
            for i in range(1, n + 1):
                e = GradedVector.basis(i, theta.codomain_space)
                try:
                    u = solve_truncated(J, e, n, y)
                except DomainError:
                    violations.append({"charts": [a, b], "point": list(y.coords), "singular": True})
                    continue
                r = (J.apply(u) - e).sup_abs()
                worst_inv = max(worst_inv, r)
                if r > tol:
                    violations.append({"charts": [a, b], "point": list(y.coords), "inverse_residual": r})
    return CocycleReport(triples, points, worst, worst_inv, violations)
