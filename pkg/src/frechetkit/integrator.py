"""Picard iteration for chart-local vector fields with a-priori error certificates.

Iterates ``l_{n+1}(t) = p0 + int_{t0}^t xi(l_n(u)) du`` on a uniform grid
using cumulative composite Simpson.  ``R_lip`` is the Lipschitz constant of
``xi`` in the metric ``d`` and ``L_sup`` bounds ``||xi||_d`` on the ball;
successive iterates then differ by at most ``L R^n / (n+1)! |t - t0|^(n+1)``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from frechetkit.calculus import MCMap, differential
from frechetkit.errors import DomainError, InconsistentBoundsError
from frechetkit.frechet_core import FrechetSpace, GradedVector, default_space, metric_norm_rows, sample_in_ball
from frechetkit.manifold_charts import Atlas, transition


def horizon(R_lip: float, L_sup: float, r: float, flow: bool = False) -> float:
    """``min{1/R, r/L}``; with ``flow=True`` the neighbourhood variant ``min{1/R, r/(2L)}``."""
    for name, val in (("R_lip", R_lip), ("L_sup", L_sup), ("r", r)):
        if not val > 0:
            raise DomainError(f"{name} must be positive, got {val}")
    return min(1.0 / R_lip, r / (2.0 * L_sup if flow else L_sup))


def error_bound(L_sup: float, R_lip: float, n: int, dt: float) -> float:
    """``L R^n / (n+1)! dt^(n+1)``."""
    if n < 0 or dt < 0:
        raise DomainError("error_bound needs n >= 0 and dt >= 0")
    return L_sup * R_lip**n / math.factorial(n + 1) * dt ** (n + 1)


def tail_bound(L_sup: float, R_lip: float, n: int, dt: float) -> float:
    """``sum_{k >= n} error_bound(L, R, k, dt)``: distance from ``l_n`` to the limit curve."""
    total, k = 0.0, n
    term = error_bound(L_sup, R_lip, k, dt)
    while term > 0 and term > 1e-17 * total:
        total += term
        k += 1
        term = error_bound(L_sup, R_lip, k, dt)
    return total


@dataclass(frozen=True, eq=False)
class VectorFieldLocal:
    """Principal part ``xi`` of a vector field in one chart, with declared bounds."""

    chart: str
    xi: Callable[[GradedVector], GradedVector]
    L_sup: float
    R_lip: float
    dim: int
    space: FrechetSpace = field(default_factory=default_space)
    heuristic: bool = False  # bounds estimated by sampling rather than declared

    @classmethod
    def from_expressions(cls, chart: str, texts, L_sup: float, R_lip: float,
                         space: FrechetSpace | None = None, heuristic: bool = False) -> "VectorFieldLocal":
        sp = space or default_space()
        P = MCMap.from_expressions(list(texts), len(texts), sp.id, name=f"xi_{chart}")
        return cls(chart, P.fn, float(L_sup), float(R_lip), len(texts), sp, heuristic)

    def __call__(self, p: GradedVector) -> GradedVector:
        return self.xi(p)

    def check_bounds(self, center: GradedVector, r: float, samples: int = 64, seed: int = 0,
                     slack: float = 1e-12) -> None:
        """Spot-check ``||xi||_d <= L_sup`` and the Lipschitz bound on ``B_r(center)``."""
        rng = np.random.default_rng(seed)
        sp = self.space
        pts = [center] + [sample_in_ball(rng, sp, r, center, max_deg=self.dim) for _ in range(samples)]
        vals = [self.xi(p) for p in pts]
        for p, v in zip(pts, vals):
            nv = sp.norm(v)
            if nv > self.L_sup * (1 + slack):
                raise DomainError(f"||xi(p)||_d = {nv} exceeds L_sup = {self.L_sup}", p)
        for i in range(1, len(pts)):
            p, q = pts[i - 1], pts[i]
            lhs, dpq = sp.distance(vals[i - 1], vals[i]), sp.distance(p, q)
            if lhs > self.R_lip * dpq * (1 + slack) + slack:
                raise DomainError(f"Lipschitz bound R_lip = {self.R_lip} violated", (p, q))


@dataclass
class PicardProblem:
    field: VectorFieldLocal
    p0: GradedVector
    t0: float = 0.0
    r: float = 1.0
    grid_step: float = 1e-3
    tol: float = 1e-12
    m: float | None = None  # defaults to the horizon

    def __post_init__(self):
        cap = horizon(self.field.R_lip, self.field.L_sup, self.r)
        if self.m is None:
            self.m = cap
        if not 0 < self.m <= cap * (1 + 1e-12):
            raise DomainError(f"horizon m = {self.m} must lie in (0, {cap}]")
        if not self.grid_step > 0:
            raise DomainError("grid step must be positive")

    @property
    def half_nodes(self) -> int:
        return max(2, math.ceil(self.m / self.grid_step - 1e-9))


@dataclass
class CurveSolution:
    times: np.ndarray
    iterates: list  # arrays of shape (len(times), dim), l_0 .. l_n
    n_iters: int
    certified_bound: list  # error_bound(L, R, n, m) for n = 0 .. n_iters-1
    successive_diffs: list  # measured sup_t d(l_{n+1}(t), l_n(t))
    quadrature_error_estimate: float
    residual: float
    residual_constant: float
    params: dict
    space_id: str = "F"

    @property
    def final(self) -> np.ndarray:
        return self.iterates[-1]

    @property
    def sound(self) -> bool:
        q = self.quadrature_error_estimate
        return all(s <= b + q for s, b in zip(self.successive_diffs, self.certified_bound))

    @property
    def tolerance(self) -> float:
        """Certified distance of the final iterate from the exact curve, plus quadrature slack."""
        p = self.params
        if self.exact_fixed_point:
            return self.quadrature_error_estimate
        return tail_bound(p["L_sup"], p["R_lip"], self.n_iters, p["m"]) + self.quadrature_error_estimate

    @property
    def exact_fixed_point(self) -> bool:
        return len(self.iterates) > 1 and np.array_equal(self.iterates[-1], self.iterates[-2])

    def point(self, k: int, n: int | None = None) -> GradedVector:
        arr = self.iterates[-1 if n is None else n]
        return GradedVector.from_array(arr[k], self.space_id)

    def value_at(self, t: float) -> GradedVector:
        """Piecewise-linear interpolation of the final curve."""
        arr = self.final
        cols = [np.interp(t, self.times, arr[:, j]) for j in range(arr.shape[1])]
        if not self.times[0] <= t <= self.times[-1]:
            raise DomainError(f"t = {t} outside the solution interval")
        return GradedVector.from_array(cols, self.space_id)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{j + 1}" for j in range(self.final.shape[1])])
            for t, row in zip(self.times, self.final):
                w.writerow([repr(float(t))] + [repr(float(x)) for x in row])

    def certificate(self) -> dict:
        return {
            "parameters": self.params,
            "n_iters": self.n_iters,
            "certified_bound": [float(b) for b in self.certified_bound],
            "successive_diffs": [float(s) for s in self.successive_diffs],
            "quadrature_error_estimate": float(self.quadrature_error_estimate),
            "residual": float(self.residual),
            "residual_constant": float(self.residual_constant),
            "bounds_sound": self.sound,
            "tolerance": float(self.tolerance),
        }

    def write_certificate(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.certificate(), fh, indent=2, sort_keys=True)


# -------------------------------------------------------------- quadrature


def _cumulative_simpson_forward(f: np.ndarray, h: float) -> np.ndarray:
    """``I_k = int_0^{k h} f`` at every node; needs at least 3 nodes.

    Even nodes use composite Simpson; odd nodes add a one-panel
    three-point rule (the backward variant at the last node).
    """
    n = len(f) - 1
    out = np.zeros_like(f)
    panels = h / 3.0 * (f[0:-2:2] + 4.0 * f[1:-1:2] + f[2::2])
    out[2::2] = np.cumsum(panels, axis=0)
    odd = np.arange(1, n + 1, 2)
    inner = odd[odd < n]
    out[inner] = out[inner - 1] + h / 12.0 * (5.0 * f[inner - 1] + 8.0 * f[inner] - f[inner + 1])
    if n % 2 == 1:
        out[n] = out[n - 1] + h / 12.0 * (-f[n - 2] + 8.0 * f[n - 1] + 5.0 * f[n])
    return out


def cumulative_simpson(f: np.ndarray, h: float, center: int) -> np.ndarray:
    """Integral from node ``center`` to every node, both directions."""
    out = np.zeros_like(f)
    out[center:] = _cumulative_simpson_forward(f[center:], h)
    out[: center + 1] = -_cumulative_simpson_forward(f[center::-1], h)[::-1]
    return out


# ----------------------------------------------------------------- solving


def _sup_distance(space: FrechetSpace, a: np.ndarray, b: np.ndarray) -> float:
    return float(metric_norm_rows(space, a - b).max())


def _iterate(prob: PicardProblem, N: int, max_iters: int):
    fld, sp = prob.field, prob.field.space
    h = prob.m / N
    times = prob.t0 + h * np.arange(-N, N + 1)
    dim = max(fld.dim, prob.p0.deg)
    p0 = prob.p0.to_array(dim)
    cur = np.tile(p0, (2 * N + 1, 1))
    iterates, diffs, bounds = [cur], [], []
    for n in range(max_iters):
        vals = np.array([fld(GradedVector.from_array(row, sp.id)).to_array(dim) for row in cur])
        nxt = p0 + cumulative_simpson(vals, h, N)
        diffs.append(_sup_distance(sp, nxt, cur))
        bounds.append(error_bound(fld.L_sup, fld.R_lip, n, prob.m))
        iterates.append(nxt)
        done = bounds[-1] < prob.tol or np.array_equal(nxt, cur)
        cur = nxt
        if done:
            break
    return times, iterates, diffs, bounds, h


def picard_solve(prob: PicardProblem, max_iters: int = 60) -> CurveSolution:
    """Run Picard iteration on ``[t0 - m, t0 + m]`` and certify it.

    The quadrature estimate is twice the largest discrepancy between the
    step-``h`` run and a step-``h/2`` run at common nodes, over all iterates.
    """
    if max_iters < 1:
        raise DomainError("max_iters must be >= 1")
    fld, sp = prob.field, prob.field.space
    N = prob.half_nodes
    times, its, diffs, bounds, h = _iterate(prob, N, max_iters)
    _, fine, _, _, _ = _iterate(prob, 2 * N, len(its) - 1)
    quad = 0.0
    for n in range(min(len(its), len(fine))):
        quad = max(quad, _sup_distance(sp, its[n], fine[n][::2]))
    quad *= 2.0

    final = its[-1]
    p0 = prob.p0.to_array(final.shape[1])
    for n, arr in enumerate(its):
        dists = metric_norm_rows(sp, arr - p0)
        k = int(dists.argmax())
        if dists[k] > prob.r + quad:
            raise InconsistentBoundsError(
                f"iterate {n} leaves B_r(p0) at t = {times[k]} (distance {dists[k]}); "
                "declared L_sup / R_lip are inconsistent",
                (n, float(times[k]), arr[k].tolist()),
            )

    dim = final.shape[1]
    deriv = (final[2:] - final[:-2]) / (2.0 * h)
    vals = np.array([fld(GradedVector.from_array(row, sp.id)).to_array(dim) for row in final[1:-1]])
    residual = _sup_distance(sp, deriv, vals)

    params = {
        "chart": fld.chart,
        "p0": list(prob.p0.coords),
        "t0": prob.t0,
        "r": prob.r,
        "m": prob.m,
        "grid_step": h,
        "tol": prob.tol,
        "L_sup": fld.L_sup,
        "R_lip": fld.R_lip,
        "heuristic_bounds": fld.heuristic,
        "max_iters": max_iters,
    }
    return CurveSolution(times, its, len(its) - 1, bounds, diffs, quad, residual,
                         residual / h**2, params, sp.id)


# -------------------------------------------------------------------- flow


def flow_with_certificate(fld: VectorFieldLocal, q: GradedVector, t: float, p0: GradedVector,
                          r: float, grid_step: float = 1e-3, tol: float = 1e-12,
                          max_iters: int = 60) -> tuple[GradedVector, CurveSolution | None]:
    """``l(t)`` for the integral curve with ``l(0) = q``, ``q`` in the ball of radius ``r/2``."""
    alpha = horizon(fld.R_lip, fld.L_sup, r, flow=True)
    dq = fld.space.distance(q, p0)
    if dq > r / 2:
        raise DomainError(f"start point at distance {dq} > r/2 = {r / 2}", q)
    if abs(t) >= alpha:
        raise DomainError(f"|t| = {abs(t)} must be below {alpha}", t)
    if t == 0:
        return q, None
    # choose the step so that t falls on a node
    k_t = math.ceil(abs(t) / grid_step)
    h = abs(t) / k_t
    K = max(2, math.floor(alpha / h * (1 - 1e-12)))
    prob = PicardProblem(fld, q, 0.0, r / 2, grid_step=h, tol=tol, m=K * h)
    sol = picard_solve(prob, max_iters)
    N = prob.half_nodes
    idx = N + (k_t if t > 0 else -k_t)
    return sol.point(idx), sol


def flow(fld: VectorFieldLocal, q: GradedVector, t: float, p0: GradedVector, r: float,
         **kw) -> GradedVector:
    return flow_with_certificate(fld, q, t, p0, r, **kw)[0]


# -------------------------------------------------------------- uniqueness


@dataclass
class UniquenessReport:
    charts: tuple
    deviation: float
    tolerance: float
    probe_residual: float
    horizon: float

    @property
    def passed(self) -> bool:
        return self.deviation <= self.tolerance


def transformation_probe(atlas: Atlas, alpha, beta, xi_a: VectorFieldLocal, xi_b: VectorFieldLocal,
                         samples: int = 16, seed: int = 0, tol: float = 1e-8) -> float:
    """Check ``xi_a(Theta x) = DTheta(x) xi_b(x)`` on overlap samples; reject with a witness."""
    rng = np.random.default_rng(seed)
    theta = transition(atlas, alpha, beta)
    worst = 0.0
    for x in atlas.sample_overlap(alpha, beta, samples, rng, chart=beta):
        lhs = xi_a(theta(x))
        rhs = differential(theta, x).apply(xi_b(x))
        r = (lhs - rhs).sup_abs()
        worst = max(worst, r)
        if r > tol * (1.0 + rhs.sup_abs()):
            raise DomainError(f"fields in charts {alpha!r} and {beta!r} are not related by the transition "
                              f"(defect {r})", x)
    return worst


def uniqueness_overlap_check(atlas: Atlas, fields: dict, alpha, beta, p: GradedVector, t_range: float,
                             r: float = 1.0, grid_step: float = 1e-3, tol: float = 1e-12,
                             samples: int = 16, seed: int = 0, max_iters: int = 60) -> UniquenessReport:
    """Integrate from the reference point ``p`` in charts ``alpha`` and ``beta`` and compare.

    The ``beta`` solution is mapped through ``Theta_{alpha beta}`` node by node
    and compared with the ``alpha`` solution in the metric ``d``.
    """
    fa, fb = fields[alpha], fields[beta]
    probe = transformation_probe(atlas, alpha, beta, fa, fb, samples, seed)
    ca, cb = atlas.chart(alpha), atlas.chart(beta)
    xa, xb = ca.forward(p), cb.forward(p)
    m = min(t_range, horizon(fa.R_lip, fa.L_sup, r), horizon(fb.R_lip, fb.L_sup, r))
    sa = picard_solve(PicardProblem(fa, xa, 0.0, r, grid_step, tol, m), max_iters)
    sb = picard_solve(PicardProblem(fb, xb, 0.0, r, grid_step, tol, m), max_iters)
    theta = transition(atlas, alpha, beta)
    sp = fa.space
    dev, scale = 0.0, 1.0
    for k in range(len(sa.times)):
        yb = sb.point(k)
        mapped = theta(yb)
        dev = max(dev, sp.distance(mapped, sa.point(k)))
        J = differential(theta, yb).dense(max(fb.dim, 1))
        scale = max(scale, float(np.abs(J).sum(axis=1).max()))
    tolerance = sa.tolerance + scale * sb.tolerance
    return UniquenessReport((alpha, beta), dev, tolerance, probe, m)
