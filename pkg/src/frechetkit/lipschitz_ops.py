"""Structured linear and multilinear maps and their Lipschitz norms.

Maps are kept as small algebraic variants rather than matrices, so sums,
differences and compositions are exact.  The Lipschitz norm

    ||L|| = sup_{x != 0} ||L.x||_d / ||x||_g

is not computable in general: :func:`lip_norm_estimate` returns a lower
bound realised by a stored witness, together with a (non-certified)
estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from frechetkit.errors import DomainError
from frechetkit.frechet_core import FrechetSpace, GradedVector, metric_norm

SCALES = tuple(10.0**k for k in range(-6, 7))


# ------------------------------------------------------------ linear maps


@dataclass(frozen=True)
class DiagonalRule:
    """Index rule ``n -> d_n`` for diagonal maps.

    ``index``: n;  ``constant``: c;  ``power``: c * n**p;
    ``geometric``: c * q**n;  ``values``: explicit list, zero beyond it.
    """

    name: str
    params: tuple = ()

    def __post_init__(self):
        if self.name not in ("index", "constant", "power", "geometric", "values"):
            raise DomainError(f"unknown diagonal rule {self.name!r}")
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))

    def __call__(self, n: int) -> float:
        p = self.params
        if self.name == "index":
            return float(n)
        if self.name == "constant":
            return p[0]
        if self.name == "power":
            return p[0] * float(n) ** p[1]
        if self.name == "geometric":
            return p[0] * p[1] ** n
        return p[n - 1] if n <= len(p) else 0.0


class LinearMapRep:
    """Common behaviour of the structured linear-map variants."""

    domain: str
    codomain: str

    def apply(self, x: GradedVector) -> GradedVector:
        if x.space_id != self.domain:
            raise DomainError(f"map expects {self.domain!r}, got vector in {x.space_id!r}", x)
        return self._apply(x)

    __call__ = apply

    def _apply(self, x: GradedVector) -> GradedVector:  # pragma: no cover - abstract
        raise NotImplementedError

    def dense(self, n: int) -> np.ndarray:
        """Explicit ``n x n`` truncation, for oracles only."""
        cols = [self.apply(GradedVector.basis(j, self.domain)).to_array(None) for j in range(1, n + 1)]
        out = np.zeros((n, n))
        for j, c in enumerate(cols):
            k = min(n, len(c))
            out[:k, j] = c[:k]
        return out

    def __add__(self, other):
        return Sum((self, other), self.domain, self.codomain)

    def __neg__(self):
        return Composition((Scalar(-1.0, self.codomain), self))

    def __sub__(self, other):
        return difference(self, other)


@dataclass(frozen=True)
class Zero(LinearMapRep):
    domain: str = "F"
    codomain: str = "F"

    def _apply(self, x):
        return GradedVector((), self.codomain)


@dataclass(frozen=True)
class Identity(LinearMapRep):
    space: str = "F"

    @property
    def domain(self):
        return self.space

    @property
    def codomain(self):
        return self.space

    def _apply(self, x):
        return x


@dataclass(frozen=True)
class Scalar(LinearMapRep):
    c: float
    space: str = "F"

    @property
    def domain(self):
        return self.space

    @property
    def codomain(self):
        return self.space

    def _apply(self, x):
        return self.c * x


@dataclass(frozen=True)
class Diagonal(LinearMapRep):
    rule: DiagonalRule
    space: str = "F"

    @property
    def domain(self):
        return self.space

    @property
    def codomain(self):
        return self.space

    def _apply(self, x):
        r = self.rule
        return GradedVector(tuple(r(i) * c for i, c in enumerate(x.coords, start=1)), self.space)


@dataclass(frozen=True)
class FiniteMatrix(LinearMapRep):
    """``k x k`` block on coordinates ``1..k``; zero on everything beyond."""

    entries: tuple
    domain: str = "F"
    codomain: str = "F"

    def __post_init__(self):
        rows = tuple(tuple(float(a) for a in row) for row in self.entries)
        k = len(rows)
        if any(len(r) != k for r in rows):
            raise DomainError("finite_matrix must be square")
        object.__setattr__(self, "entries", rows)

    @classmethod
    def from_array(cls, arr, domain="F", codomain=None):
        arr = np.asarray(arr, dtype=float)
        k = max(arr.shape)
        sq = np.zeros((k, k))
        sq[: arr.shape[0], : arr.shape[1]] = arr
        return cls(tuple(map(tuple, sq)), domain, domain if codomain is None else codomain)

    @property
    def size(self) -> int:
        return len(self.entries)

    def _apply(self, x):
        k = self.size
        xs = [x.coord(j) for j in range(1, k + 1)]
        out = tuple(sum(a * b for a, b in zip(row, xs)) for row in self.entries)
        return GradedVector(out, self.codomain)


@dataclass(frozen=True)
class Shift(LinearMapRep):
    direction: str  # "left" drops x_1, "right" prepends a zero
    space: str = "F"

    def __post_init__(self):
        if self.direction not in ("left", "right"):
            raise DomainError(f"shift direction must be left/right, got {self.direction!r}")

    @property
    def domain(self):
        return self.space

    @property
    def codomain(self):
        return self.space

    def _apply(self, x):
        if self.direction == "left":
            return GradedVector(x.coords[1:], self.space)
        if not x.coords:
            return x
        return GradedVector((0.0,) + x.coords, self.space)


@dataclass(frozen=True)
class Sum(LinearMapRep):
    terms: tuple
    domain: str = "F"
    codomain: str = "F"

    def __post_init__(self):
        for t in self.terms:
            if t.domain != self.domain or t.codomain != self.codomain:
                raise DomainError("sum terms must share domain and codomain")

    def _apply(self, x):
        out = GradedVector((), self.codomain)
        for t in self.terms:
            out = out + t.apply(x)
        return out


@dataclass(frozen=True)
class Composition(LinearMapRep):
    """``factors[0] o factors[1] o ...``; applied right to left."""

    factors: tuple

    def __post_init__(self):
        fs = self.factors
        if not fs:
            raise DomainError("empty composition")
        for outer, inner in zip(fs, fs[1:]):
            if inner.codomain != outer.domain:
                raise DomainError(
                    f"cannot compose: inner codomain {inner.codomain!r} != outer domain {outer.domain!r}"
                )

    @property
    def domain(self):
        return self.factors[-1].domain

    @property
    def codomain(self):
        return self.factors[0].codomain

    def _apply(self, x):
        for f in reversed(self.factors):
            x = f.apply(x)
        return x


def apply_linear(L, x: GradedVector) -> GradedVector:
    return L.apply(x)


def compose(L: LinearMapRep, H: LinearMapRep) -> LinearMapRep:
    """``L o H`` as a composition variant (nested compositions are flattened)."""
    if H.codomain != L.domain:
        raise DomainError(f"cannot compose: {H.codomain!r} != {L.domain!r}")
    fl = L.factors if isinstance(L, Composition) else (L,)
    fh = H.factors if isinstance(H, Composition) else (H,)
    return Composition(fl + fh)


def _summands(L):
    if isinstance(L, Sum):
        out = []
        for t in L.terms:
            out.extend(_summands(t))
        return out
    if isinstance(L, Zero):
        return []
    return [L]


def difference(L: LinearMapRep, H: LinearMapRep) -> LinearMapRep:
    """``L - H`` with common summands cancelled structurally.

    Cancelling first makes ``difference(L + G, H + G)`` the very same map as
    ``difference(L, H)``, so the induced metric is translation invariant
    term for term rather than only up to rounding.
    """
    if (L.domain, L.codomain) != (H.domain, H.codomain):
        raise DomainError("difference needs maps with the same domain and codomain")
    left, right = _summands(L), _summands(H)
    for t in list(right):
        if t in left:
            left.remove(t)
            right.remove(t)
    terms = tuple(left) + tuple(-t for t in right)
    if not terms:
        return Zero(L.domain, L.codomain)
    if len(terms) == 1:
        return terms[0]
    return Sum(terms, L.domain, L.codomain)


def is_structurally_zero(L) -> bool:
    if isinstance(L, Zero):
        return True
    if isinstance(L, Scalar):
        return L.c == 0.0
    if isinstance(L, Sum):
        return all(is_structurally_zero(t) for t in L.terms)
    if isinstance(L, Composition):
        return any(is_structurally_zero(f) for f in L.factors)
    if isinstance(L, FiniteMatrix):
        return all(a == 0.0 for row in L.entries for a in row)
    return False


# ----------------------------------------------------------- norm estimation


@dataclass
class LipNormEstimate:
    lower_bound: float
    estimate: float
    probes_used: int
    seed: int
    witness: tuple | None = None  # tuple of GradedVector (one per slot)


def _homogeneous_norm(space: FrechetSpace, v: GradedVector) -> float:
    # small-vector limit: ||s v||_d / s -> sup_n alpha_n rho_n(v)
    return max(
        (space.alphas(n) * r for n, r in enumerate(space.seminorms.prefix_values(v), start=1)),
        default=0.0,
    )


def _ratio(fn, doms, cod, xs) -> float:
    den = 1.0
    for sp, x in zip(doms, xs):
        den *= metric_norm(sp, x)
    if den == 0.0:
        return math.nan
    return metric_norm(cod, fn(*xs)) / den


def _limit_ratio(fn, doms, cod, xs) -> float:
    den = 1.0
    for sp, x in zip(doms, xs):
        den *= _homogeneous_norm(sp, x)
    if den == 0.0:
        return 0.0
    # multilinear in xs, so scaling all slots down realises this limit
    return _homogeneous_norm(cod, fn(*xs)) / den


def _probe_stream(rng, doms, degree) -> Iterator[tuple]:
    """Deterministic probe sequence; later probes never depend on the budget."""
    k = len(doms)
    for n in range(1, degree + 1):
        for s in SCALES:
            yield tuple(GradedVector.basis(n, sp.id, s) for sp in doms)
    while True:
        xs = []
        for sp in doms:
            d = int(rng.integers(1, degree + 1))
            v = rng.normal(size=d) * 10.0 ** rng.uniform(-6, 6)
            xs.append(GradedVector(tuple(v), sp.id))
        yield tuple(xs)
        yield None  # placeholder: local refinement of the incumbent
        if k == 1:
            yield None


def _refine(rng, best: tuple, degree: int) -> tuple:
    i = int(rng.integers(len(best)))
    x = best[i]
    move = rng.integers(3)
    if move == 0 or x.deg == 0:
        new = (10.0 ** rng.normal(scale=0.5)) * x
    elif move == 1:
        arr = np.array(x.coords)
        j = int(rng.integers(len(arr)))
        arr[j] *= 1.0 + rng.normal(scale=0.3)
        new = GradedVector(tuple(arr), x.space_id)
    else:
        d = max(x.deg, int(rng.integers(1, degree + 1)))
        arr = x.to_array(d)
        arr += rng.normal(size=d) * 0.1 * max(x.sup_abs(), 1e-300)
        new = GradedVector(tuple(arr), x.space_id)
    return best[:i] + (new,) + best[i + 1:]


def _estimate(fn, doms, cod, probe_budget, seed, degree, extra_probes=(), is_zero=False):
    if probe_budget < 1:
        raise DomainError("probe_budget must be >= 1")
    if is_zero:
        return LipNormEstimate(0.0, 0.0, 0, seed, None)
    rng = np.random.default_rng(seed)
    best, best_xs, limit = 0.0, None, 0.0
    used = 0

    def consider(xs):
        nonlocal best, best_xs, limit
        r = _ratio(fn, doms, cod, xs)
        if math.isnan(r):
            return
        if r > best or best_xs is None:
            best, best_xs = r, xs
        limit = max(limit, _limit_ratio(fn, doms, cod, xs))

    for xs in extra_probes:
        consider(tuple(xs))
    for xs in _probe_stream(rng, doms, degree):
        if used >= probe_budget:
            break
        used += 1
        if xs is None:
            if best_xs is None:
                continue
            xs = _refine(rng, best_xs, degree)
        consider(xs)
    return LipNormEstimate(best, max(best, limit), used, seed, best_xs)


def lip_norm_estimate(L: LinearMapRep, domain: FrechetSpace, codomain: FrechetSpace,
                      probe_budget: int = 256, seed: int = 0, degree: int = 8,
                      extra_probes: Sequence[GradedVector] = ()) -> LipNormEstimate:
    """Lower bound (with witness) and estimate of ``||L||_{g,d}``.

    Probes are basis vectors at scales 1e-6..1e6, then alternating random
    vectors and local refinements of the best witness.  ``extra_probes`` are
    evaluated in addition to the budget (used for witness transfer).
    """
    if L.domain != domain.id or L.codomain != codomain.id:
        raise DomainError("map spaces do not match the given spaces")
    return _estimate(L.apply, (domain,), codomain, probe_budget, seed, degree,
                     [(x,) for x in extra_probes], is_structurally_zero(L))


def witness_ratio(L, domain: FrechetSpace, codomain: FrechetSpace, x: GradedVector) -> float:
    return _ratio(L.apply, (domain,), codomain, (x,))


def op_metric(L: LinearMapRep, H: LinearMapRep, domain: FrechetSpace, codomain: FrechetSpace,
              probe_budget: int = 256, seed: int = 0, degree: int = 8) -> LipNormEstimate:
    """``D(L, H) = ||L - H||`` via the estimator on the structural difference."""
    return lip_norm_estimate(difference(L, H), domain, codomain, probe_budget, seed, degree)


def evaluation_continuity_probe(L: LinearMapRep, domain: FrechetSpace, codomain: FrechetSpace,
                                x: GradedVector, direction: GradedVector,
                                steps: int = 12) -> list[tuple[float, float]]:
    """``(||x - x'||_g, ||L.x - L.x'||_d)`` along ``x' = x + 10**-k direction``."""
    out = []
    lx = L.apply(x)
    for k in range(steps):
        xp = x + (10.0**-k) * direction
        out.append((domain.distance(x, xp), codomain.distance(lx, L.apply(xp))))
    return out


# ------------------------------------------------------- multilinear maps


class MultilinearMapRep:
    """k-linear map ``F_1 x ... x F_k -> F``.

    ``partial(f1)`` fixes the first slot and returns a map of arity ``k-1``;
    evaluation of every variant is defined through it so that currying and
    uncurrying reproduce values bit for bit.
    """

    arity: int
    factor_spaces: tuple
    codomain: str

    def evaluate(self, *xs: GradedVector) -> GradedVector:
        if len(xs) != self.arity:
            raise DomainError(f"expected {self.arity} arguments, got {len(xs)}")
        for x, sp in zip(xs, self.factor_spaces):
            if x.space_id != sp:
                raise DomainError(f"argument in {x.space_id!r}, slot expects {sp!r}", x)
        return self._evaluate(xs)

    __call__ = evaluate

    def _evaluate(self, xs):
        head = self.partial(xs[0])
        if self.arity == 1:
            return head
        return head._evaluate(xs[1:])

    def partial(self, f1):  # pragma: no cover - abstract
        raise NotImplementedError

    # arity-1 maps double as linear maps
    @property
    def domain(self):
        return self.factor_spaces[0]

    def apply(self, x):
        return self.evaluate(x)


class TensorMultilinear(MultilinearMapRep):
    """Dense coefficient tensor on a truncation: ``out_i = sum C[i,j1..jk] x1_j1 ... xk_jk``."""

    def __init__(self, coeffs, factor_spaces=None, codomain="F"):
        self.coeffs = np.asarray(coeffs, dtype=float)
        self.arity = self.coeffs.ndim - 1
        if self.arity < 1:
            raise DomainError("coefficient tensor needs at least one input axis")
        self.factor_spaces = tuple(factor_spaces or (codomain,) * self.arity)
        self.codomain = codomain

    def partial(self, f1):
        n = self.coeffs.shape[1]
        x = f1.to_array(max(n, f1.deg))[:n]
        contracted = np.tensordot(self.coeffs, x, axes=([1], [0]))
        if self.arity == 1:
            return GradedVector(tuple(contracted), self.codomain)
        return TensorMultilinear(contracted, self.factor_spaces[1:], self.codomain)


class FunctionMultilinear(MultilinearMapRep):
    """Multilinear map given by a callable (e.g. polarised quadratic forms)."""

    def __init__(self, fn: Callable, factor_spaces: Sequence[str], codomain: str = "F",
                 symmetric: bool = False):
        self.fn = fn
        self.factor_spaces = tuple(factor_spaces)
        self.arity = len(self.factor_spaces)
        self.codomain = codomain
        self.symmetric = symmetric

    def _evaluate(self, xs):
        return self.fn(*xs)

    def partial(self, f1):
        if self.arity == 1:
            return self.fn(f1)
        fn = self.fn
        return FunctionMultilinear(lambda *rest: fn(f1, *rest), self.factor_spaces[1:], self.codomain)


class CurriedMap:
    """``F_1 -> L(F_2, ..., F_k; F)``, the curried form of a multilinear map."""

    def __init__(self, source: MultilinearMapRep):
        if source.arity < 2:
            raise DomainError(f"curry needs arity >= 2, got {source.arity}")
        self.source = source
        self.domain = source.factor_spaces[0]
        self.inner_spaces = source.factor_spaces[1:]
        self.codomain = source.codomain

    def apply(self, f1: GradedVector) -> MultilinearMapRep:
        if f1.space_id != self.domain:
            raise DomainError(f"curried map expects {self.domain!r}", f1)
        return self.source.partial(f1)

    __call__ = apply


class Uncurried(MultilinearMapRep):
    """Multilinear map ``(f1, ..., fk) -> C(f1)(f2, ..., fk)``."""

    def __init__(self, curried):
        self.curried = curried
        self.factor_spaces = (curried.domain,) + tuple(curried.inner_spaces)
        self.arity = len(self.factor_spaces)
        self.codomain = curried.codomain

    def partial(self, f1):
        return self.curried.apply(f1)


class Permuted(MultilinearMapRep):
    """``B~(y_1, ..., y_k) = B(x_1, ..., x_k)`` where ``x_{perm[i]} = y_i``."""

    def __init__(self, source: MultilinearMapRep, perm: Sequence[int]):
        if sorted(perm) != list(range(source.arity)):
            raise DomainError(f"{perm!r} is not a permutation of the slots")
        self.source = source
        self.perm = tuple(perm)
        self.arity = source.arity
        self.factor_spaces = tuple(source.factor_spaces[p] for p in self.perm)
        self.codomain = source.codomain

    def _evaluate(self, ys):
        xs = [None] * self.arity
        for i, p in enumerate(self.perm):
            xs[p] = ys[i]
        return self.source.evaluate(*xs)

    def partial(self, f1):
        if self.arity == 1:
            return self._evaluate((f1,))
        return FunctionMultilinear(lambda *rest: self._evaluate((f1,) + rest),
                                   self.factor_spaces[1:], self.codomain)


def curry(B: MultilinearMapRep) -> CurriedMap:
    return CurriedMap(B)


def uncurry(C) -> MultilinearMapRep:
    if isinstance(C, CurriedMap):
        return Uncurried(C)
    raise DomainError("uncurry expects a curried map")


def permute(B: MultilinearMapRep, perm: Sequence[int]) -> MultilinearMapRep:
    return Permuted(B, perm)


def multilinear_norm_estimate(B: MultilinearMapRep, factor_spaces: Sequence[FrechetSpace],
                              codomain: FrechetSpace, probe_budget: int = 256, seed: int = 0,
                              degree: int = 6, extra_probes=()) -> LipNormEstimate:
    """Lower bound of ``sup ||B(f_1..f_k)|| / (||f_1|| ... ||f_k||)`` with witness tuple."""
    return _estimate(B.evaluate, tuple(factor_spaces), codomain, probe_budget, seed, degree,
                     extra_probes)


def multilinear_ratio(B: MultilinearMapRep, factor_spaces, codomain, xs) -> float:
    return _ratio(B.evaluate, tuple(factor_spaces), codomain, tuple(xs))


def curried_ratio(C: CurriedMap, factor_spaces, codomain, xs) -> float:
    """Ratio of the curried map at a transferred witness tuple.

    Computed the nested way: the inner map's ratio at ``xs[1:]`` divided by
    ``||xs[0]||``.
    """
    inner = C.apply(xs[0])
    rest_spaces = tuple(factor_spaces[1:])
    fn = inner.evaluate
    r_inner = _ratio(fn, rest_spaces, codomain, tuple(xs[1:]))
    return r_inner / metric_norm(factor_spaces[0], xs[0])


# ----------------------------------------------------------- random samples


def random_structured_map(rng: np.random.Generator, space: str = "F", depth: int = 1,
                          max_size: int = 4) -> LinearMapRep:
    """Random map from the structured variants (for property checks)."""
    kind = int(rng.integers(7 if depth > 0 else 5))
    if kind == 0:
        return Identity(space)
    if kind == 1:
        return Scalar(float(rng.integers(-8, 9)) / 4.0, space)
    if kind == 2:
        choice = rng.integers(4)
        if choice == 0:
            rule = DiagonalRule("index")
        elif choice == 1:
            rule = DiagonalRule("geometric", (float(rng.uniform(0.5, 2)), float(rng.uniform(0.2, 1.5))))
        elif choice == 2:
            rule = DiagonalRule("power", (1.0, float(rng.uniform(-2, 1))))
        else:
            rule = DiagonalRule("values", tuple(rng.integers(-4, 5, size=int(rng.integers(1, 5)))))
        return Diagonal(rule, space)
    if kind == 3:
        k = int(rng.integers(1, max_size + 1))
        return FiniteMatrix(tuple(map(tuple, rng.integers(-3, 4, size=(k, k)).astype(float))), space, space)
    if kind == 4:
        return Shift("left" if rng.random() < 0.5 else "right", space)
    a = random_structured_map(rng, space, depth - 1, max_size)
    b = random_structured_map(rng, space, depth - 1, max_size)
    if kind == 5:
        return Sum((a, b), space, space)
    return compose(a, b)
