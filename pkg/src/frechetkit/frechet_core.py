"""Truncated graded sequence spaces with a standard translation-invariant metric.

A vector stores finitely many coordinates; every coordinate past ``deg`` is
zero.  Seminorm families are monotone in ``n`` and stabilise once ``n``
reaches the degree of their argument, so the supremum defining the metric
is attained at a computable index and can be evaluated exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from frechetkit.errors import DomainError

DEFAULT_TOL = 1e-12


@dataclass(frozen=True)
class GradedVector:
    """Finitely supported element of a sequence space (1-based coordinates)."""

    coords: tuple[float, ...] = ()
    space_id: str = "F"

    def __post_init__(self):
        cs = [float(c) for c in self.coords]
        while cs and cs[-1] == 0.0:
            cs.pop()
        object.__setattr__(self, "coords", tuple(cs))

    @property
    def deg(self) -> int:
        return len(self.coords)

    def coord(self, i: int) -> float:
        return self.coords[i - 1] if 1 <= i <= len(self.coords) else 0.0

    def to_array(self, n: int | None = None) -> np.ndarray:
        n = self.deg if n is None else n
        if self.deg > n:
            raise DomainError(f"vector of degree {self.deg} does not fit truncation {n}", self)
        out = np.zeros(n)
        out[: self.deg] = self.coords
        return out

    @classmethod
    def from_array(cls, arr: Iterable[float], space_id: str = "F") -> "GradedVector":
        return cls(tuple(float(a) for a in arr), space_id)

    @classmethod
    def zero(cls, space_id: str = "F") -> "GradedVector":
        return cls((), space_id)

    @classmethod
    def basis(cls, n: int, space_id: str = "F", scale: float = 1.0) -> "GradedVector":
        return cls((0.0,) * (n - 1) + (float(scale),), space_id)

    def with_space(self, space_id: str) -> "GradedVector":
        return GradedVector(self.coords, space_id)

    def sup_abs(self) -> float:
        return max((abs(c) for c in self.coords), default=0.0)

    def _check(self, other: "GradedVector"):
        if not isinstance(other, GradedVector):
            return NotImplemented
        if other.space_id != self.space_id:
            raise DomainError(f"space mismatch: {self.space_id!r} vs {other.space_id!r}")
        return None

    def __add__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        a, b = self.coords, other.coords
        if len(a) < len(b):
            a, b = b, a
        return GradedVector(tuple(x + y for x, y in zip(a, b)) + a[len(b):], self.space_id)

    def __sub__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        n = max(self.deg, other.deg)
        return GradedVector(
            tuple(self.coord(i) - other.coord(i) for i in range(1, n + 1)), self.space_id
        )

    def __neg__(self):
        return GradedVector(tuple(-c for c in self.coords), self.space_id)

    def __mul__(self, c):
        if not isinstance(c, (int, float, np.floating, np.integer)):
            return NotImplemented
        c = float(c)
        return GradedVector(tuple(c * x for x in self.coords), self.space_id)

    __rmul__ = __mul__

    def __truediv__(self, c):
        if not isinstance(c, (int, float, np.floating, np.integer)):
            return NotImplemented
        c = float(c)
        return GradedVector(tuple(x / c for x in self.coords), self.space_id)

    def __repr__(self):
        return f"GradedVector({list(self.coords)}, {self.space_id!r})"


# --------------------------------------------------------------- sequences


@dataclass(frozen=True)
class AlphaSequence:
    """Positive, strictly decreasing null sequence given by a closed-form rule.

    Rules: ``geometric`` (``c * q**n``, 0 < q < 1) and ``power``
    (``c * n**-p``, p > 0).  The parameter checks in ``__post_init__`` are
    exactly the conditions under which the rule is positive, strictly
    decreasing and tends to zero, so nothing is checked by sampling.
    """

    rule: str = "geometric"
    c: float = 1.0
    q: float = 0.5
    p: float = 1.0

    def __post_init__(self):
        if not self.c > 0:
            raise DomainError(f"alpha scale c must be positive, got {self.c}")
        if self.rule == "geometric":
            if not 0 < self.q < 1:
                raise DomainError(f"geometric alpha needs 0 < q < 1, got {self.q}")
        elif self.rule == "power":
            if not self.p > 0:
                raise DomainError(f"power alpha needs p > 0, got {self.p}")
        else:
            raise DomainError(f"unknown alpha rule {self.rule!r}")

    def __call__(self, n: int) -> float:
        if self.rule == "geometric":
            return self.c * self.q**n
        return self.c * float(n) ** (-self.p)


@dataclass(frozen=True)
class WeightRule:
    """Positive weights ``w_i`` for weighted prefix seminorms."""

    rule: str = "constant"
    value: float = 1.0

    def __post_init__(self):
        if self.rule not in ("constant", "power", "geometric"):
            raise DomainError(f"unknown weight rule {self.rule!r}")
        if self.rule in ("constant", "geometric") and not self.value > 0:
            raise DomainError(f"weight parameter must be positive, got {self.value}")

    def __call__(self, i: int) -> float:
        if self.rule == "constant":
            return self.value
        if self.rule == "power":
            return float(i) ** self.value
        return self.value**i


@dataclass(frozen=True)
class SeminormFamily:
    """``rho_n(v) = max_{i <= n} w_i |v_i|`` (``w_i = 1`` for ``prefix_sup``)."""

    kind: str = "prefix_sup"
    weights: WeightRule = field(default_factory=WeightRule)

    def __post_init__(self):
        if self.kind not in ("prefix_sup", "weighted_prefix_sup"):
            raise DomainError(f"unknown seminorm kind {self.kind!r}")

    def weighted(self, v: GradedVector) -> list[float]:
        if self.kind == "prefix_sup":
            return [abs(c) for c in v.coords]
        w = self.weights
        return [w(i) * abs(c) for i, c in enumerate(v.coords, start=1)]

    def prefix_values(self, v: GradedVector) -> list[float]:
        """``[rho_1(v), ..., rho_deg(v)]``."""
        out, run = [], 0.0
        for a in self.weighted(v):
            run = a if a > run else run
            out.append(run)
        return out


@dataclass(frozen=True)
class FrechetSpace:
    id: str = "F"
    seminorms: SeminormFamily = field(default_factory=SeminormFamily)
    alphas: AlphaSequence = field(default_factory=AlphaSequence)
    degree_cap: int | None = None

    def _own(self, v: GradedVector):
        if v.space_id != self.id:
            raise DomainError(f"vector lives in {v.space_id!r}, not in space {self.id!r}", v)
        if self.degree_cap is not None and v.deg > self.degree_cap:
            raise DomainError(f"degree {v.deg} exceeds truncation cap {self.degree_cap}", v)

    def seminorm(self, n: int, v: GradedVector) -> float:
        return seminorm_eval(self, n, v)

    def distance(self, e: GradedVector, f: GradedVector) -> float:
        return metric_distance(self, e, f)

    def norm(self, f: GradedVector) -> float:
        return metric_norm(self, f)

    def zero(self) -> GradedVector:
        return GradedVector((), self.id)

    def vector(self, coords: Sequence[float]) -> GradedVector:
        return GradedVector(tuple(coords), self.id)


def default_space(space_id: str = "F") -> FrechetSpace:
    """alpha_n = 2**-n with the plain prefix-sup seminorms."""
    return FrechetSpace(space_id)


# -------------------------------------------------------------- operations


def seminorm_eval(space: FrechetSpace, n: int, v: GradedVector) -> float:
    space._own(v)
    if n < 1:
        raise DomainError(f"seminorm index must be >= 1, got {n}")
    prefix = space.seminorms.prefix_values(v)
    if not prefix:
        return 0.0
    return prefix[min(n, len(prefix)) - 1]


def _norm_of_difference(space: FrechetSpace, diff: GradedVector) -> float:
    best = 0.0
    alpha = space.alphas
    for n, rho in enumerate(space.seminorms.prefix_values(diff), start=1):
        term = alpha(n) * (rho / (1.0 + rho))
        if term > best:
            best = term
    return best


def metric_distance(space: FrechetSpace, e: GradedVector, f: GradedVector) -> float:
    """``sup_n alpha_n rho_n(e-f) / (1 + rho_n(e-f))``, evaluated exactly.

    For ``n`` past ``D = deg(e - f)`` the seminorm is frozen at ``rho_D``
    while ``alpha_n`` keeps shrinking, so the max over ``n <= D`` is the sup.
    """
    space._own(e)
    space._own(f)
    return _norm_of_difference(space, e - f)


def metric_norm(space: FrechetSpace, f: GradedVector) -> float:
    space._own(f)
    return _norm_of_difference(space, f)


def metric_norm_rows(space: FrechetSpace, arr) -> np.ndarray:
    """``||row||_d`` for each row of a 2-D coordinate array; same values as :func:`metric_norm`.

    Padding zeros past a row's degree only add terms with smaller ``alpha_n``,
    so they never change the max.
    """
    a = np.abs(np.atleast_2d(np.asarray(arr, dtype=float)))
    if a.shape[1] == 0:
        return np.zeros(a.shape[0])
    if space.seminorms.kind == "weighted_prefix_sup":
        w = np.array([space.seminorms.weights(i) for i in range(1, a.shape[1] + 1)])
        a = a * w
    rho = np.maximum.accumulate(a, axis=1)
    alpha = np.array([space.alphas(n) for n in range(1, a.shape[1] + 1)])
    return (alpha * (rho / (1.0 + rho))).max(axis=1)


def metric_terms(space: FrechetSpace, v: GradedVector, upto: int) -> list[float]:
    """All terms ``alpha_n rho_n/(1+rho_n)`` for ``n = 1..upto`` (diagnostics)."""
    out = []
    for n in range(1, upto + 1):
        rho = seminorm_eval(space, n, v)
        out.append(space.alphas(n) * (rho / (1.0 + rho)))
    return out


# ---------------------------------------------------------------- sampling


def sample_vector(rng: np.random.Generator, space_id: str = "F", max_deg: int = 8,
                  log_spread: float = 3.0) -> GradedVector:
    """Random vector with random degree, random zeros and mixed magnitudes."""
    deg = int(rng.integers(0, max_deg + 1))
    scale = 10.0 ** rng.uniform(-log_spread, log_spread)
    coords = rng.normal(size=deg) * scale
    coords[rng.random(deg) < 0.15] = 0.0
    return GradedVector(tuple(coords), space_id)


def sample_dyadic(rng: np.random.Generator, space_id: str = "F", max_deg: int = 6,
                  bits: int = 10, magnitude: int = 64) -> GradedVector:
    """Random vector with coordinates ``k / 2**bits``; sums and small products stay exact."""
    deg = int(rng.integers(1, max_deg + 1))
    ks = rng.integers(-magnitude * 2**bits, magnitude * 2**bits + 1, size=deg)
    return GradedVector(tuple(float(k) / 2**bits for k in ks), space_id)


def _ball_scale_limit(space: FrechetSpace, v: GradedVector, radius: float) -> float:
    # Ball = intersection over n of {rho_n <= phi^{-1}(radius/alpha_n)}, phi(x) = x/(1+x).
    limit = math.inf
    for n, rho in enumerate(space.seminorms.prefix_values(v), start=1):
        ratio = radius / space.alphas(n)
        if ratio >= 1.0 or rho == 0.0:
            continue
        limit = min(limit, (ratio / (1.0 - ratio)) / rho)
    return limit


def sample_in_ball(rng: np.random.Generator, space: FrechetSpace, radius: float,
                   center: GradedVector | None = None, max_deg: int = 8) -> GradedVector:
    """Point of the closed metric ball ``B_radius(center)``."""
    v = sample_vector(rng, space.id, max_deg)
    smax = _ball_scale_limit(space, v, radius)
    if smax < 1.0:
        v = (rng.random() * smax) * v
        # rounding can leave the scaled point a hair outside
        while metric_norm(space, v) > radius:
            v = 0.5 * v
    center = space.zero() if center is None else center
    return center + v


@dataclass
class ConvexityReport:
    radius: float
    samples: int
    violations: int
    worst_margin: float  # max of ||lam e + mu f|| - radius (<= 0 means inside)
    witness: tuple | None = None

    @property
    def passed(self) -> bool:
        return self.violations == 0


def check_absolutely_convex(space: FrechetSpace, radius: float, sample_count: int,
                            seed: int, tol: float = DEFAULT_TOL) -> ConvexityReport:
    """Probe absolute convexity of the closed ball of the given radius at the origin."""
    if radius <= 0 or sample_count < 1:
        raise DomainError("radius must be positive and sample_count >= 1")
    rng = np.random.default_rng(seed)
    violations, worst, witness = 0, -math.inf, None
    for _ in range(sample_count):
        e = sample_in_ball(rng, space, radius)
        f = sample_in_ball(rng, space, radius)
        lam, mu = rng.uniform(-1, 1, size=2)
        total = abs(lam) + abs(mu)
        if total > 1.0:
            lam, mu = lam / total, mu / total
        margin = metric_norm(space, lam * e + mu * f) - radius
        if margin > worst:
            worst = margin
        if margin > tol:
            violations += 1
            witness = witness or (e, f, float(lam), float(mu))
    return ConvexityReport(radius, sample_count, violations, worst, witness)


@dataclass
class MetricAxiomReport:
    samples: int
    violations: dict
    worst: dict
    witnesses: dict

    @property
    def passed(self) -> bool:
        return not any(self.violations.values())


def check_metric_axioms(space: FrechetSpace, sample_count: int, seed: int,
                        tol: float = DEFAULT_TOL, max_deg: int = 8) -> MetricAxiomReport:
    """Identity, symmetry, triangle inequality, translation invariance and boundedness."""
    rng = np.random.default_rng(seed)
    names = ("identity", "symmetry", "triangle", "translation", "bounded", "scaling")
    violations = dict.fromkeys(names, 0)
    worst = dict.fromkeys(names, 0.0)
    witnesses: dict = {}
    alpha1 = space.alphas(1)

    def record(name, excess, wit):
        if excess > worst[name]:
            worst[name] = excess
        if excess > tol:
            violations[name] += 1
            witnesses.setdefault(name, wit)

    for _ in range(sample_count):
        e, f, g, h = (sample_vector(rng, space.id, max_deg) for _ in range(4))
        d_ef = metric_distance(space, e, f)
        d_fe = metric_distance(space, f, e)
        record("identity", metric_distance(space, e, e), (e,))
        if e != f and d_ef == 0.0:
            record("identity", math.inf, (e, f))
        record("symmetry", abs(d_ef - d_fe), (e, f))
        d_eg = metric_distance(space, e, g)
        record("triangle", d_eg - (d_ef + metric_distance(space, f, g)), (e, f, g))
        record("translation", abs(metric_distance(space, e + h, f + h) - d_ef), (e, f, h))
        record("bounded", metric_norm(space, e) - alpha1, (e,))
        c = float(rng.uniform(-1, 1))
        record("scaling", metric_norm(space, c * e) - metric_norm(space, e), (e, c))
    return MetricAxiomReport(sample_count, violations, worst, witnesses)
